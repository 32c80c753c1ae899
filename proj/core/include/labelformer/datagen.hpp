#pragma once

#include <random>
#include <span>
#include <vector>

#include "labelformer/scene.hpp"

namespace labelformer::datagen {

using Rng = std::mt19937_64;

// Spawn area and separation rules used when placing actors.
struct SpawnLimits {
  double min_range = 6.0;   // closest allowed approach to the sensor, meters
  double max_range = 45.0;  // farthest allowed distance from the sensor, meters
  double min_separation = 10.0;  // minimum center distance between actors, every frame
  int max_retries = 200;
};

// Box pose of an actor with `profile` after `t` seconds, starting from `start`.
geometry::Pose propagate(const geometry::Pose& start, const MotionProfile& profile, double t);

// Draws a random profile covering all four motion kinds.
MotionProfile random_profile(Rng& rng);

// Generates GT trajectories and surface points. Detections are left empty;
// see perturb_detections. Throws DataError if actors cannot be placed.
Scene generate_scene(const SceneConfig& cfg, std::span<const MotionProfile> profiles,
                     const SpawnLimits& limits = {});

// Samples LiDAR-like returns on the faces of `b` visible from `origin`.
// Expected count is density * (10 / range)^2. Timestamps are left at 0.
PointList sample_surface_points(const BevBox& b, double height, geometry::Vec2 origin,
                                double density, Rng& rng);

// Per-frame detections built from the GT boxes under `noise`.
std::vector<std::vector<Detection>> perturb_detections(const Scene& scene, const NoiseModel& noise,
                                                       Rng& rng);

// Convenience: generate_scene + perturb_detections with an RNG derived from cfg.rng_seed.
Scene generate_full_scene(const SceneConfig& cfg, std::span<const MotionProfile> profiles,
                          const NoiseModel& noise, const SpawnLimits& limits = {});

}  // namespace labelformer::datagen
