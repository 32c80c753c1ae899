#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "labelformer/error.hpp"
#include "labelformer/nn/ops.hpp"
#include "labelformer/training.hpp"
#include "test_support.hpp"

using namespace labelformer;
using namespace labelformer::training;
using geometry::Pose;
using model::RefinedTrajectory;
using nn::Tensor;

namespace {

RefinedTrajectory exact(const std::vector<BevBox>& gt) {
  RefinedTrajectory r;
  for (const auto& b : gt) r.poses.push_back({b.x, b.y, b.theta});
  r.l = gt[0].l;
  r.w = gt[0].w;
  return r;
}

std::vector<BevBox> random_gt(std::size_t M, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-3.0, 3.0), th(-3.1, 3.1);
  std::vector<BevBox> gt;
  for (std::size_t i = 0; i < M; ++i) gt.push_back({u(rng), u(rng), 4.2, 1.8, th(rng)});
  return gt;
}

model::ForwardOutput as_output(const RefinedTrajectory& r, bool requires_grad = false) {
  std::vector<double> p;
  for (const auto& q : r.poses) p.insert(p.end(), {q.x, q.y, q.theta});
  return {Tensor::from({r.poses.size(), 3}, p, requires_grad), Tensor::from({2}, {r.l, r.w}, requires_grad)};
}

const std::vector<trajectory::Trajectory>& small_set() {
  static const auto set = [] {
    NoiseModel n;
    n.sigma_xy = 0.3;
    n.drop_prob = 0.0;
    return lf_test::make_dataset(2, 77, n, 8, 14, 60.0);
  }();
  return set;
}

}  // namespace

TEST(SmoothL1, Examples) {
  EXPECT_EQ(smooth_l1(1.0, 1.0, 1.0), 0.0);
  EXPECT_EQ(smooth_l1(0.5, 0.0, 1.0), 0.125);
  EXPECT_EQ(smooth_l1(2.0, 0.0, 1.0), 1.5);
  EXPECT_EQ(smooth_l1(-2.0, 0.0, 1.0), 1.5);
}

TEST(Losses, Examples) {
  const std::vector<BevBox> one{{0.0, 0.0, 2.0, 1.0, 0.3}};
  auto p = exact(one);
  EXPECT_EQ(total_loss(p, one), 0.0);
  p.poses[0].x = 0.5;
  EXPECT_NEAR(regression_loss(p, one), 0.0125, 1e-15);

  const std::vector<BevBox> two{{0.0, 0.0, 2.0, 1.0, 0.0}, {5.0, 0.0, 2.0, 1.0, 0.0}};
  auto q = exact(two);
  q.poses[0].x = 1.0;
  EXPECT_NEAR(iou_loss(q, two), 1.0 / 3.0, 1e-15);
  q.poses[0].x = 10.0;
  q.poses[1].x = -10.0;
  EXPECT_EQ(iou_loss(q, two), 1.0);
  EXPECT_NEAR(total_loss(q, two), regression_loss(q, two) + iou_loss(q, two), 1e-15);
  EXPECT_THROW(regression_loss(q, one), std::invalid_argument);
}

TEST(Losses, HeadingPlusPiInvarianceAndNonNegativity) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 0.5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto gt = random_gt(6, rng);
    auto p = exact(gt);
    for (auto& q : p.poses) {
      q.x += n(rng);
      q.y += n(rng);
      q.theta += n(rng);
    }
    p.l += n(rng) * 0.2;
    auto flipped = p;
    for (auto& q : flipped.poses) q.theta += geometry::kPi;
    EXPECT_NEAR(regression_loss(flipped, gt), regression_loss(p, gt), 1e-12);
    EXPECT_GE(total_loss(p, gt), 0.0);
    EXPECT_NEAR(total_loss(flipped, gt), total_loss(p, gt), 1e-12);
  }
}

TEST(Losses, ZeroOnlyForMatchModuloPi) {
  std::mt19937_64 rng(4);
  const auto gt = random_gt(4, rng);
  auto p = exact(gt);
  p.poses[2].theta += geometry::kPi;
  EXPECT_NEAR(total_loss(p, gt), 0.0, 1e-15);
  p.poses[2].theta += 0.01;
  EXPECT_GT(total_loss(p, gt), 0.0);
}

TEST(Losses, TensorRouteMatchesScalarRoute) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 0.4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto gt = random_gt(5, rng);
    auto p = exact(gt);
    for (auto& q : p.poses) {
      q.x += n(rng);
      q.y += 3 * n(rng);
      q.theta += n(rng);
    }
    p.w += 0.3 * n(rng);
    const auto out = as_output(p);
    EXPECT_NEAR(training::regression_loss(out, gt).item(), regression_loss(p, gt), 1e-12);
    EXPECT_NEAR(training::iou_loss(out, gt).item(), iou_loss(p, gt), 1e-12);
    EXPECT_NEAR(training::total_loss(out, gt).item(), total_loss(p, gt), 1e-12);
  }
}

TEST(Losses, TensorGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 0.3);
  const auto gt = random_gt(4, rng);
  auto p = exact(gt);
  for (auto& q : p.poses) {
    q.x += n(rng);
    q.y += n(rng);
    q.theta += n(rng);
  }
  p.l += 0.2;
  const auto out = as_output(p, true);
  const auto r = lf_test::grad_check({out.poses, out.size}, [&](const std::vector<Tensor>& x) {
    return training::total_loss(model::ForwardOutput{x[0], x[1]}, gt);
  });
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Augment, SizeOffsetRange) {
  EXPECT_EQ(size_offset_range(0.3, 0.2), std::make_pair(-0.15, 0.15));
  EXPECT_EQ(size_offset_range(4.5, 0.2), std::make_pair(-0.2, 0.2));
}

TEST(Augment, SubsampleIdentityCases) {
  const Sample s = make_sample(small_set()[0]);
  Rng rng(1);
  const Sample same = subsample_trajectory(s, 1.0, rng);
  EXPECT_EQ(same.t_end, s.t_end);
  Sample two = s;
  two.input.boxes.resize(2);
  two.input.points.resize(2);
  two.gt.resize(2);
  two.context.resize(2);
  two.t_end.resize(2);
  EXPECT_EQ(subsample_trajectory(two, 0.5, rng).t_end, two.t_end);
}

TEST(Augment, SubsampleWindowsProperty) {
  const Sample s = make_sample(small_set()[0]);
  const std::size_t M = s.size();
  ASSERT_GE(M, 8u);
  const std::size_t min_len = std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(0.5 * M)));
  Rng rng(2);
  std::vector<int> seen_len(M + 1, 0);
  for (int draw = 0; draw < 10000; ++draw) {
    const Sample w = subsample_trajectory(s, 0.5, rng);
    const std::size_t L = w.size();
    ASSERT_GE(L, min_len);
    ASSERT_LE(L, M);
    ++seen_len[L];
    const auto start = std::find(s.t_end.begin(), s.t_end.end(), w.t_end[0]) - s.t_end.begin();
    ASSERT_LE(static_cast<std::size_t>(start) + L, M);
    for (std::size_t i = 0; i < L; ++i) ASSERT_EQ(w.t_end[i], s.t_end[start + i]);
    const auto& mid = w.input.boxes[L / 2];
    ASSERT_LT(std::abs(mid.x) + std::abs(mid.y) + std::abs(mid.theta), 1e-9);
    ASSERT_EQ(w.input.t_ref, w.t_end[L / 2]);
    // GT moves rigidly with its input box.
    for (std::size_t i = 0; i < L; i += 3) {
      const auto &a = s.input.boxes[start + i], &g = s.gt[start + i];
      const auto &a2 = w.input.boxes[i], &g2 = w.gt[i];
      ASSERT_NEAR(std::hypot(a.x - g.x, a.y - g.y), std::hypot(a2.x - g2.x, a2.y - g2.y), 1e-9);
    }
  }
  for (std::size_t L = min_len; L <= M; ++L) EXPECT_GT(seen_len[L], 0) << L;
}

TEST(Augment, PerturbZeroRangesIsIdentity) {
  const Sample s = make_sample(small_set()[0]);
  AugmentConfig cfg;
  cfg.trans_range = cfg.rot_range_deg = cfg.len_range = cfg.wid_range = 0.0;
  Rng rng(3);
  const Sample p = perturb_boxes(s, cfg, rng);
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_NEAR(p.input.boxes[i].x, s.input.boxes[i].x, 1e-12);
    EXPECT_NEAR(p.input.boxes[i].theta, s.input.boxes[i].theta, 1e-12);
    EXPECT_EQ(p.input.boxes[i].l, s.input.boxes[i].l);
    EXPECT_NEAR(p.gt[i].y, s.gt[i].y, 1e-12);
    EXPECT_EQ(p.input.points[i].size(), s.input.points[i].size());
  }
}

TEST(Augment, PerturbSizeOffsetsUniformAndPositive) {
  Sample s = make_sample(small_set()[0]);
  for (auto& b : s.input.boxes) b.w = 0.12;  // narrower than the range: clamps to [-0.06, 0.06]
  AugmentConfig cfg;
  Rng rng(4);
  constexpr int kBins = 10;
  std::vector<int> hl(kBins, 0), hw(kBins, 0);
  int n = 0;
  while (n < 10000) {
    const Sample p = perturb_boxes(s, cfg, rng);
    for (std::size_t i = 0; i < s.size() && n < 10000; ++i, ++n) {
      const double dl = p.input.boxes[i].l - s.input.boxes[i].l;
      const double dw = p.input.boxes[i].w - s.input.boxes[i].w;
      ASSERT_GT(p.input.boxes[i].w, 0.0);
      ASSERT_LE(std::abs(dl), 0.2 + 1e-12);
      ASSERT_LE(std::abs(dw), 0.06 + 1e-12);
      ++hl[std::min(kBins - 1, static_cast<int>((dl + 0.2) / 0.4 * kBins))];
      ++hw[std::min(kBins - 1, static_cast<int>((dw + 0.06) / 0.12 * kBins))];
    }
  }
  auto chi2 = [&](const std::vector<int>& h) {
    double c = 0.0;
    for (int k : h) c += (k - 1000.0) * (k - 1000.0) / 1000.0;
    return c;
  };
  // 9 degrees of freedom, p = 0.001.
  EXPECT_LT(chi2(hl), 27.88);
  EXPECT_LT(chi2(hw), 27.88);
}

TEST(Augment, PerturbRecropsPointsAroundNewBoxes) {
  const Sample s = make_sample(small_set()[0]);
  AugmentConfig cfg;
  cfg.trans_range = 0.5;
  Rng rng(5);
  const Sample p = perturb_boxes(s, cfg, rng);
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto b = p.input.boxes[i];
    b.l *= 1.1 + 1e-9;
    b.w *= 1.1 + 1e-9;
    for (const auto& q : p.input.points[i]) EXPECT_TRUE(geometry::contains(b, q.x, q.y));
  }
}

TEST(Sample, MissingGtRejected) {
  auto t = small_set()[0];
  t.gt[1].reset();
  EXPECT_THROW(make_sample(t), DataError);
}

TEST(TrainConfig, KvRoundTripAndSchedule) {
  TrainConfig c;
  c.epochs = 3;
  c.lr = 1e-3;
  c.augment.perturb = false;
  KvConfig kv;
  c.write_kv(kv);
  const auto back = TrainConfig::from_kv(kv);
  EXPECT_EQ(back.epochs, 3u);
  EXPECT_EQ(back.lr, 1e-3);
  EXPECT_FALSE(back.augment.perturb);
  EXPECT_EQ(back.schedule().warmup_epochs, 1.5);
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Train, OverfitsSingleSample) {
  std::vector<trajectory::Trajectory> one{small_set()[0]};
  model::LabelFormer net(lf_test::tiny_config());
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 1;
  cfg.lr = 1e-3;
  cfg.augment.perturb = false;
  cfg.augment.subsequence = false;
  const auto r = train(net, one, one, cfg);
  ASSERT_EQ(r.log.size(), 50u);
  EXPECT_LT(r.log.back().train_loss, r.log.front().train_loss);
  EXPECT_GE(r.best_val_mean_iou, r.init_val_mean_iou);
}

TEST(Train, DeterministicAcrossJobsAndLrLogMatchesSchedule) {
  const auto& set = small_set();
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.lr = 1e-3;
  cfg.seed = 9;
  auto run = [&](int jobs) {
    model::LabelFormer net(lf_test::tiny_config());
    auto c = cfg;
    c.jobs = jobs;
    const auto r = train(net, set, {}, c);
    std::ostringstream csv;
    write_metrics_csv(csv, r.log);
    return csv.str();
  };
  const auto a = run(1);
  EXPECT_EQ(a, run(1));
  EXPECT_EQ(a, run(3));

  model::LabelFormer net(lf_test::tiny_config());
  const auto r = train(net, set, {}, cfg);
  for (const auto& e : r.log) EXPECT_EQ(e.lr, nn::lr_at(cfg.schedule(), static_cast<double>(e.epoch)));
}

TEST(Train, SkipsTrajectoriesWithoutFullGt) {
  auto set = small_set();
  set[0].gt[0].reset();
  model::LabelFormer net(lf_test::tiny_config());
  TrainConfig cfg;
  cfg.epochs = 1;
  const auto r = train(net, set, small_set(), cfg);
  EXPECT_EQ(r.skipped, 1u);
}
