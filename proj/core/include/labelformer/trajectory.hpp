#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "labelformer/geometry.hpp"
#include "labelformer/model.hpp"
#include "labelformer/scene.hpp"
#include "labelformer/tracker.hpp"

namespace labelformer::trajectory {

using geometry::BevBox;
using geometry::PointList;

// One object track in its trajectory frame, as consumed by training and
// refinement.
struct Trajectory {
  std::string object_id;
  std::string scene;
  int tracklet_id = 0;
  std::optional<int> gt_actor_id;
  std::vector<int> frames;
  std::vector<double> t_end;
  double t_ref = 0.0;
  // World pose of the trajectory frame origin.
  geometry::Pose origin;
  std::vector<BevBox> boxes;
  std::vector<std::optional<BevBox>> gt;
  // Cropped with the 10% enlargement around each box.
  std::vector<PointList> points;
  // Wider crop kept so that augmentation can re-crop around perturbed boxes.
  std::vector<PointList> context_points;

  std::size_t size() const { return boxes.size(); }
  bool has_full_gt() const;
  model::TrajectoryInput input() const;
  void validate() const;
};

struct ExtractConfig {
  double enlarge = 0.10;
  double context_margin = 1.0;
  std::size_t min_length = 1;
};

// Returns nothing for tracklets without a GT association or shorter than
// cfg.min_length.
std::optional<Trajectory> extract(const Scene& scene, const std::string& scene_name,
                                  const tracker::AssociatedTracklet& tracklet, const ExtractConfig& cfg = {});

void write_trajectories(std::ostream& out, std::span<const Trajectory> trajs);
void write_trajectories(const std::filesystem::path& path, std::span<const Trajectory> trajs);
std::vector<Trajectory> read_trajectories(std::istream& in, const std::string& source_name = "<stream>");
std::vector<Trajectory> read_trajectories(const std::filesystem::path& path);

// Refinement output for one trajectory, in its trajectory frame.
struct RefinedRecord {
  std::string object_id;
  std::vector<int> frames;
  std::vector<BevBox> init;
  std::vector<BevBox> refined;
  std::vector<std::optional<BevBox>> gt;
  double l = 0.0;
  double w = 0.0;
  double runtime_ms = 0.0;
};

void write_refined(std::ostream& out, std::span<const RefinedRecord> records);
void write_refined(const std::filesystem::path& path, std::span<const RefinedRecord> records);
std::vector<RefinedRecord> read_refined(std::istream& in, const std::string& source_name = "<stream>");
std::vector<RefinedRecord> read_refined(const std::filesystem::path& path);

}  // namespace labelformer::trajectory
