#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "labelformer/error.hpp"
#include "labelformer/eval.hpp"

using namespace labelformer;
using namespace labelformer::eval;

namespace {

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<TrackScore> scores(std::initializer_list<double> s) {
  std::vector<TrackScore> out;
  int i = 0;
  for (double v : s) out.push_back({"t" + std::to_string(i++), v, 10, MotionState::kDynamic});
  return out;
}

}  // namespace

TEST(TrackIou, Examples) {
  const std::vector<BevBox> a{{0, 0, 2, 1, 0}, {3, 0, 2, 1, 0.4}};
  EXPECT_NEAR(track_iou(a, a), 1.0, 1e-12);
  // Unit squares offset by d have IoU (1 - d) / (1 + d): 0.6 at d = 0.25, 0.8 at d = 1/9.
  const std::vector<BevBox> gt{{0, 0, 1, 1, 0}, {0, 0, 1, 1, 0}};
  const std::vector<BevBox> p{{0.25, 0, 1, 1, 0}, {1.0 / 9.0, 0, 1, 1, 0}};
  EXPECT_NEAR(track_iou(p, gt), 0.7, 1e-12);
  const std::vector<BevBox> far{{10, 0, 1, 1, 0}, {-10, 0, 1, 1, 0}};
  EXPECT_EQ(track_iou(far, gt), 0.0);
  EXPECT_THROW(track_iou(std::span(a).first(1), gt), std::invalid_argument);
  const std::vector<std::optional<BevBox>> partial{gt[0], std::nullopt};
  EXPECT_NEAR(track_iou(gt, partial), 0.5, 1e-12);
}

TEST(MotionState, DisplacementRule) {
  std::vector<std::optional<BevBox>> gt{BevBox{0, 0, 4, 2, 0}, BevBox{0.9, 0.5, 4, 2, 0}, std::nullopt};
  EXPECT_EQ(motion_state(gt), MotionState::kStationary);
  gt.push_back(BevBox{1.0, 0.0, 4, 2, 0});
  EXPECT_EQ(motion_state(gt), MotionState::kDynamic);
}

TEST(EvaluateSet, Examples) {
  const auto r = evaluate_set(scores({0.7, 0.4}));
  EXPECT_NEAR(r.all.mean_iou, 0.55, 1e-15);
  EXPECT_EQ(r.all.recall[0], 0.5);
  EXPECT_EQ(r.all.recall[1], 0.5);
  EXPECT_EQ(r.all.recall[2], 0.5);
  EXPECT_EQ(r.all.recall[3], 0.0);
  EXPECT_FALSE(r.stationary.has_value());
  ASSERT_TRUE(r.dynamic.has_value());

  const auto perfect = evaluate_set(scores({1.0, 1.0, 1.0}));
  EXPECT_EQ(perfect.all.mean_iou, 1.0);
  for (double v : perfect.all.recall) EXPECT_EQ(v, 1.0);
  EXPECT_EQ(evaluate_set(scores({0.8})).all.recall[3], 1.0);
  EXPECT_THROW(evaluate_set({}), std::invalid_argument);
  EXPECT_THROW(evaluate_set(scores({1.2})), std::invalid_argument);
}

TEST(EvaluateSet, RecallMonotoneAndBounds) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> s(1 + rng() % 30);
    for (auto& v : s) v = u(rng);
    for (double a = 0.0; a < 1.0; a += 0.01) EXPECT_GE(recall_at(s, a), recall_at(s, a + 0.01));
    EXPECT_EQ(recall_at(s, 0.0), 1.0);
    const auto sum = summarize(s);
    EXPECT_GE(sum.mean_iou, recall_at(s, 1.0));
    EXPECT_LE(sum.mean_iou, 1.0);
  }
}

TEST(CompareReports, DeltasAndAlignment) {
  auto before = scores({0.6, 0.5});
  auto after = scores({0.7, 0.5});
  std::swap(after[0], after[1]);
  const auto cmp = compare_reports(before, after);
  ASSERT_EQ(cmp.rows.size(), 2u);
  EXPECT_EQ(cmp.rows[0].object_id, "t0");
  EXPECT_NEAR(cmp.rows[0].delta, 0.1, 1e-15);
  EXPECT_EQ(cmp.rows[1].delta, 0.0);
  for (const auto& r : compare_reports(before, before).rows) EXPECT_EQ(r.delta, 0.0);

  auto renamed = after;
  renamed[0].object_id = "other";
  EXPECT_THROW(compare_reports(before, renamed), DataError);
  EXPECT_THROW(compare_reports(before, scores({0.1})), DataError);
}

TEST(ReportCsv, RowsAndFooters) {
  auto before = scores({0.6, 0.5, 0.9});
  before[2].motion_state = MotionState::kStationary;
  auto after = before;
  after[0].S = 0.7;
  std::ostringstream out;
  write_report_csv(out, compare_reports(before, after));
  const auto ls = lines(out.str());
  ASSERT_GE(ls.size(), 5u);
  EXPECT_EQ(ls[0], "object_id,M,motion_state,S_init,S_refined,delta");
  EXPECT_EQ(ls[1], "t0,10,dynamic,0.600000,0.700000,0.100000");
  EXPECT_EQ(ls[3].rfind("t2,10,stationary,", 0), 0u);
  // Track rows plus one aggregate row before the footers.
  EXPECT_EQ(ls[4].rfind("aggregate,", 0), 0u);
  EXPECT_EQ(ls[5].rfind("mean_iou_all,", 0), 0u);
  bool saw_rc = false;
  for (const auto& l : ls) saw_rc |= l.rfind("rc@0.8_all,", 0) == 0;
  EXPECT_TRUE(saw_rc);
}

TEST(RecallCurve, GridAndMonotone) {
  const auto before = scores({0.2, 0.55, 0.9});
  auto after = before;
  after[0].S = 0.65;
  std::ostringstream out;
  write_recall_curve(out, compare_reports(before, after));
  const auto ls = lines(out.str());
  ASSERT_EQ(ls.size(), 22u);
  EXPECT_EQ(ls[0], "threshold,recall_init,recall_refined");
  double prev_a = 2.0, prev_b = 2.0;
  for (std::size_t i = 1; i < ls.size(); ++i) {
    double t, a, b;
    ASSERT_EQ(std::sscanf(ls[i].c_str(), "%lf,%lf,%lf", &t, &a, &b), 3);
    EXPECT_NEAR(t, 0.05 * static_cast<double>(i - 1), 1e-9);
    EXPECT_LE(a, prev_a);
    EXPECT_LE(b, prev_b);
    prev_a = a;
    prev_b = b;
  }
}

TEST(ScoreRecords, GtAgainstItself) {
  trajectory::RefinedRecord r;
  r.object_id = "x";
  r.frames = {0, 1};
  r.init = {{0, 0, 4, 2, 0}, {0.5, 0, 4, 2, 0}};
  r.refined = r.init;
  r.refined[1].x = 1.2;
  r.gt = {r.init[0], r.init[1]};
  const std::vector<trajectory::RefinedRecord> recs{r};
  const auto init = score_records(recs, false);
  EXPECT_EQ(init[0].S, 1.0);
  EXPECT_EQ(init[0].motion_state, MotionState::kStationary);
  EXPECT_LT(score_records(recs, true)[0].S, 1.0);
}
