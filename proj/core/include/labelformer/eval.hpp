#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "labelformer/geometry.hpp"
#include "labelformer/trajectory.hpp"

namespace labelformer::eval {

using geometry::BevBox;

enum class MotionState { kStationary, kDynamic };

const char* to_string(MotionState s);

inline constexpr std::array<double, 4> kRecallThresholds{0.5, 0.6, 0.7, 0.8};

struct TrackScore {
  std::string object_id;
  double S = 0.0;
  std::size_t M = 0;
  MotionState motion_state = MotionState::kDynamic;
};

// Mean per-frame rotated IoU. Frames without GT score 0.
double track_iou(std::span<const BevBox> pred, std::span<const std::optional<BevBox>> gt);
double track_iou(std::span<const BevBox> pred, std::span<const BevBox> gt);

// Stationary when the GT centers span less than 1 m along both axes.
MotionState motion_state(std::span<const std::optional<BevBox>> gt, double threshold = 1.0);

// Fraction of scores >= alpha.
double recall_at(std::span<const double> scores, double alpha);

struct Summary {
  std::size_t count = 0;
  double mean_iou = 0.0;
  std::array<double, kRecallThresholds.size()> recall{};
};

// Throws std::invalid_argument on an empty set.
Summary summarize(std::span<const double> scores);

struct SetReport {
  Summary all;
  std::optional<Summary> stationary;
  std::optional<Summary> dynamic;
};

SetReport evaluate_set(std::span<const TrackScore> tracks);

// Scores the initial (use_refined = false) or refined boxes of each record.
std::vector<TrackScore> score_records(std::span<const trajectory::RefinedRecord> records, bool use_refined);

struct ComparisonRow {
  std::string object_id;
  std::size_t M = 0;
  MotionState motion_state = MotionState::kDynamic;
  double S_init = 0.0;
  double S_refined = 0.0;
  double delta = 0.0;
};

struct Comparison {
  std::vector<ComparisonRow> rows;
  SetReport before;
  SetReport after;
};

// Aligns by object_id (order-insensitive). Throws DataError when the id sets differ.
Comparison compare_reports(std::span<const TrackScore> before, std::span<const TrackScore> after);

// One row per track, then one "aggregate" row, then footer rows for the mean
// IoU and each RC@alpha over all tracks and per motion state.
void write_report_csv(std::ostream& out, const Comparison& cmp);
// threshold,recall_init,recall_refined on a 0.00..1.00 grid in steps of 0.05.
void write_recall_curve(std::ostream& out, const Comparison& cmp);

}  // namespace labelformer::eval
