#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "labelformer/geometry.hpp"

namespace labelformer {

using geometry::BevBox;
using geometry::Point4;
using geometry::PointList;

enum class MotionKind { kStatic, kConstantVelocity, kTurning, kAccelerating };

const char* to_string(MotionKind kind);
MotionKind motion_kind_from_string(const std::string& s);

struct MotionProfile {
  MotionKind kind = MotionKind::kStatic;
  double speed = 0.0;     // m/s
  double yaw_rate = 0.0;  // rad/s
  double accel = 0.0;     // m/s^2
};

// First-stage detector error model.
struct NoiseModel {
  double sigma_xy = 0.1;
  double sigma_theta = 3.0 * geometry::kPi / 180.0;
  double sigma_lw = 0.05;
  double heading_flip_prob = 0.05;
  double drop_prob = 0.05;
  double score_floor = 0.3;
  double sigma_score = 0.02;

  static NoiseModel zero();
  void validate() const;
};

struct SceneConfig {
  int num_actors = 4;
  int num_frames = 40;
  double frame_period = 0.1;
  geometry::Vec2 sensor_origin{};
  double points_at_10m = 200.0;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct Detection {
  BevBox box;
  double score = 1.0;
  int frame = 0;
};

struct GtBox {
  int actor_id = 0;
  BevBox box;
};

struct SceneFrame {
  int frame_index = 0;
  double t_start = 0.0;
  double t_end = 0.0;
  PointList points;
  std::vector<GtBox> gt;
  std::vector<Detection> det;
};

struct Actor {
  int actor_id = 0;
  MotionProfile profile;
  double height = 1.5;
};

struct Scene {
  SceneConfig config;
  NoiseModel noise;
  std::vector<Actor> actors;
  std::vector<SceneFrame> frames;

  // Ground-truth box of `actor_id` at frame `frame_index`, if present.
  std::optional<BevBox> gt_box(int actor_id, int frame_index) const;
};

inline constexpr int kSceneFormatVersion = 1;

// Rounds to the 9 significant digits used by every text artifact.
double canonical_real(double v);

// JSON Lines: header {version, config} then one object per frame.
void write_scene(std::ostream& out, const Scene& scene);
void write_scene(const std::filesystem::path& path, const Scene& scene);
Scene read_scene(std::istream& in, const std::string& source_name = "<stream>");
Scene read_scene(const std::filesystem::path& path);

}  // namespace labelformer
