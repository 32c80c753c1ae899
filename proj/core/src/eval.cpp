#include "labelformer/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <stdexcept>

#include "labelformer/error.hpp"

namespace labelformer::eval {

const char* to_string(MotionState s) { return s == MotionState::kStationary ? "stationary" : "dynamic"; }

double track_iou(std::span<const BevBox> pred, std::span<const std::optional<BevBox>> gt) {
  if (pred.size() != gt.size()) {
    throw std::invalid_argument("track_iou: " + std::to_string(pred.size()) + " predicted vs " +
                                std::to_string(gt.size()) + " GT frames");
  }
  if (pred.empty()) throw std::invalid_argument("track_iou: empty track");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (gt[i]) sum += geometry::rotated_iou(pred[i], *gt[i]);
  }
  return sum / static_cast<double>(pred.size());
}

double track_iou(std::span<const BevBox> pred, std::span<const BevBox> gt) {
  std::vector<std::optional<BevBox>> g(gt.begin(), gt.end());
  return track_iou(pred, g);
}

MotionState motion_state(std::span<const std::optional<BevBox>> gt, double threshold) {
  double lo_x = INFINITY, hi_x = -INFINITY, lo_y = INFINITY, hi_y = -INFINITY;
  for (const auto& g : gt) {
    if (!g) continue;
    lo_x = std::min(lo_x, g->x);
    hi_x = std::max(hi_x, g->x);
    lo_y = std::min(lo_y, g->y);
    hi_y = std::max(hi_y, g->y);
  }
  if (lo_x > hi_x) return MotionState::kStationary;
  return (hi_x - lo_x < threshold && hi_y - lo_y < threshold) ? MotionState::kStationary : MotionState::kDynamic;
}

double recall_at(std::span<const double> scores, double alpha) {
  if (scores.empty()) throw std::invalid_argument("recall_at: empty set");
  const auto hits = std::count_if(scores.begin(), scores.end(), [alpha](double s) { return s >= alpha; });
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

Summary summarize(std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("summarize: empty set");
  Summary s;
  s.count = scores.size();
  double sum = 0.0;
  for (double v : scores) sum += v;
  s.mean_iou = sum / static_cast<double>(scores.size());
  for (std::size_t k = 0; k < kRecallThresholds.size(); ++k) s.recall[k] = recall_at(scores, kRecallThresholds[k]);
  return s;
}

SetReport evaluate_set(std::span<const TrackScore> tracks) {
  if (tracks.empty()) throw std::invalid_argument("evaluate_set: empty set");
  std::vector<double> all, stat, dyn;
  for (const TrackScore& t : tracks) {
    if (!(t.S >= 0.0 && t.S <= 1.0 + 1e-12)) {
      throw std::invalid_argument("evaluate_set: score of " + t.object_id + " outside [0, 1]");
    }
    all.push_back(t.S);
    (t.motion_state == MotionState::kStationary ? stat : dyn).push_back(t.S);
  }
  SetReport r;
  r.all = summarize(all);
  if (!stat.empty()) r.stationary = summarize(stat);
  if (!dyn.empty()) r.dynamic = summarize(dyn);
  return r;
}

std::vector<TrackScore> score_records(std::span<const trajectory::RefinedRecord> records, bool use_refined) {
  std::vector<TrackScore> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    const auto& boxes = use_refined ? r.refined : r.init;
    out.push_back({r.object_id, track_iou(boxes, r.gt), r.frames.size(), motion_state(r.gt)});
  }
  return out;
}

Comparison compare_reports(std::span<const TrackScore> before, std::span<const TrackScore> after) {
  if (before.size() != after.size()) {
    throw DataError("compare_reports: " + std::to_string(before.size()) + " tracks before vs " +
                    std::to_string(after.size()) + " after");
  }
  std::map<std::string, const TrackScore*> by_id;
  for (const auto& t : after) {
    if (!by_id.emplace(t.object_id, &t).second) throw DataError("compare_reports: duplicate id " + t.object_id);
  }
  Comparison cmp;
  for (const auto& b : before) {
    const auto it = by_id.find(b.object_id);
    if (it == by_id.end()) throw DataError("compare_reports: " + b.object_id + " missing from the second report");
    const TrackScore& a = *it->second;
    cmp.rows.push_back({b.object_id, b.M, b.motion_state, b.S, a.S, a.S - b.S});
  }
  cmp.before = evaluate_set(before);
  cmp.after = evaluate_set(after);
  return cmp;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void footer(std::ostream& out, const std::string& group, const Summary& b, const Summary& a) {
  out << "mean_iou_" << group << ",," << group << ',' << fmt(b.mean_iou) << ',' << fmt(a.mean_iou) << ','
      << fmt(a.mean_iou - b.mean_iou) << '\n';
  for (std::size_t k = 0; k < kRecallThresholds.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "rc@%.1f_", kRecallThresholds[k]);
    out << name << group << ",," << group << ',' << fmt(b.recall[k]) << ',' << fmt(a.recall[k]) << ','
        << fmt(a.recall[k] - b.recall[k]) << '\n';
  }
}

}  // namespace

void write_report_csv(std::ostream& out, const Comparison& cmp) {
  out << "object_id,M,motion_state,S_init,S_refined,delta\n";
  for (const auto& r : cmp.rows) {
    out << r.object_id << ',' << r.M << ',' << to_string(r.motion_state) << ',' << fmt(r.S_init) << ','
        << fmt(r.S_refined) << ',' << fmt(r.delta) << '\n';
  }
  std::size_t frames = 0;
  for (const auto& r : cmp.rows) frames += r.M;
  out << "aggregate," << frames << ",all," << fmt(cmp.before.all.mean_iou) << ',' << fmt(cmp.after.all.mean_iou)
      << ',' << fmt(cmp.after.all.mean_iou - cmp.before.all.mean_iou) << '\n';
  footer(out, "all", cmp.before.all, cmp.after.all);
  if (cmp.before.stationary && cmp.after.stationary) footer(out, "stationary", *cmp.before.stationary, *cmp.after.stationary);
  if (cmp.before.dynamic && cmp.after.dynamic) footer(out, "dynamic", *cmp.before.dynamic, *cmp.after.dynamic);
}

void write_recall_curve(std::ostream& out, const Comparison& cmp) {
  std::vector<double> before, after;
  for (const auto& r : cmp.rows) {
    before.push_back(r.S_init);
    after.push_back(r.S_refined);
  }
  out << "threshold,recall_init,recall_refined\n";
  for (int k = 0; k <= 20; ++k) {
    const double alpha = k / 20.0;
    out << fmt(alpha) << ',' << fmt(recall_at(before, alpha)) << ',' << fmt(recall_at(after, alpha)) << '\n';
  }
}

}  // namespace labelformer::eval
