#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "labelformer/scene.hpp"

namespace labelformer::tracker {

struct TrackerConfig {
  double nms_iou = 0.1;
  double score_min_det = 0.1;
  double match_dist_max = 5.0;
  double decay = 0.9;
  double terminate_below = 0.1;

  void validate() const;
};

struct TrackEntry {
  int frame = 0;
  BevBox box;
  bool matched = false;
  double score = 0.0;  // tracklet confidence after this frame's update
};

struct Tracklet {
  int id = 0;
  std::vector<TrackEntry> entries;
  double score = 0.0;

  int steps() const { return static_cast<int>(entries.size()); }
  const TrackEntry& last() const { return entries.back(); }
};

// Greedy NMS by descending score (stable for ties). Suppresses any box whose
// rotated IoU with an already kept box exceeds `iou_thresh`.
std::vector<Detection> nms(std::span<const Detection> dets, double iou_thresh);

// Constant-velocity extrapolation from the last two entries.
geometry::Vec2 predict_position(const Tracklet& t);

// assignment[k] is the detection index matched to tracklets[k], or -1.
std::vector<int> greedy_match(std::span<const Tracklet> tracklets,
                              std::span<const Detection> detections, double match_dist_max);

// Confidence update for a matched tracklet; the detection score is fixed at 1.
double update_matched_score(double c_old, int steps_old, double decay = 0.9);

struct TrackerState {
  std::vector<Tracklet> active;
  std::vector<Tracklet> finished;
  int next_id = 0;
  int last_frame = -1;
};

// Advances the tracker by one frame. Frames must be strictly increasing.
void step(TrackerState& state, int frame_index, std::span<const Detection> detections,
          const TrackerConfig& cfg = {});

// Tracklets from all frames of `scene`, ordered by id. Trailing unmatched
// (extrapolated) entries are trimmed.
std::vector<Tracklet> run_tracker(const Scene& scene, const TrackerConfig& cfg = {});

// Actor id for the tracklet by per-frame max-IoU vote, or nullopt for a false positive.
std::optional<int> associate_gt(const Tracklet& tracklet, const Scene& scene,
                                double min_iou = 0.1);

struct AssociatedTracklet {
  Tracklet tracklet;
  std::optional<int> gt_actor_id;
};

void write_tracklets(std::ostream& out, std::span<const AssociatedTracklet> tracklets);
void write_tracklets(const std::filesystem::path& path,
                     std::span<const AssociatedTracklet> tracklets);
std::vector<AssociatedTracklet> read_tracklets(std::istream& in,
                                               const std::string& source_name = "<stream>");
std::vector<AssociatedTracklet> read_tracklets(const std::filesystem::path& path);

}  // namespace labelformer::tracker
