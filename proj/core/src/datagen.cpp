#include "labelformer/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "labelformer/error.hpp"

namespace labelformer::datagen {

namespace {

using geometry::Pose;
using geometry::Vec2;

constexpr double kSurfaceJitter = 0.02;
constexpr double kMaxExpectedPoints = 20000.0;
constexpr double kMinBoxSide = 0.1;

Rng derived_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double std_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

struct ActorPlan {
  Actor actor;
  Pose start;
  double length = 4.5;
  double width = 1.9;
};

BevBox box_at(const ActorPlan& plan, double t) {
  const Pose p = propagate(plan.start, plan.actor.profile, t);
  return {p.x, p.y, plan.length, plan.width, p.theta};
}

}  // namespace

Pose propagate(const Pose& start, const MotionProfile& profile, double t) {
  const double c = std::cos(start.theta);
  const double s = std::sin(start.theta);
  switch (profile.kind) {
    case MotionKind::kStatic:
      return {start.x, start.y, geometry::normalize_angle(start.theta)};
    case MotionKind::kConstantVelocity: {
      const double d = profile.speed * t;
      return {start.x + d * c, start.y + d * s, geometry::normalize_angle(start.theta)};
    }
    case MotionKind::kTurning: {
      const double w = profile.yaw_rate;
      const double heading = start.theta + w * t;
      if (std::abs(w) < 1e-12) {
        const double d = profile.speed * t;
        return {start.x + d * c, start.y + d * s, geometry::normalize_angle(heading)};
      }
      const double r = profile.speed / w;
      return {start.x + r * (std::sin(heading) - s), start.y - r * (std::cos(heading) - c),
              geometry::normalize_angle(heading)};
    }
    case MotionKind::kAccelerating: {
      double te = t;
      if (profile.accel < 0.0) te = std::min(t, profile.speed / -profile.accel);
      const double d = profile.speed * te + 0.5 * profile.accel * te * te;
      return {start.x + d * c, start.y + d * s, geometry::normalize_angle(start.theta)};
    }
  }
  return start;
}

MotionProfile random_profile(Rng& rng) {
  MotionProfile p;
  const int kind = std::uniform_int_distribution<int>(0, 3)(rng);
  switch (kind) {
    case 0:
      p.kind = MotionKind::kStatic;
      break;
    case 1:
      p.kind = MotionKind::kConstantVelocity;
      p.speed = uniform(rng, 2.0, 12.0);
      break;
    case 2:
      p.kind = MotionKind::kTurning;
      p.speed = uniform(rng, 3.0, 9.0);
      p.yaw_rate = uniform(rng, 0.1, 0.4) * (uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0);
      break;
    default:
      p.kind = MotionKind::kAccelerating;
      p.speed = uniform(rng, 2.0, 9.0);
      p.accel = uniform(rng, 0.5, 2.5) * (uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0);
      break;
  }
  return p;
}

PointList sample_surface_points(const BevBox& b, double height, Vec2 origin, double density,
                                Rng& rng) {
  PointList out;
  if (!(density > 0.0)) return out;
  const double range = std::hypot(b.x - origin.x, b.y - origin.y);
  const double expected = std::min(kMaxExpectedPoints, density * 100.0 / std::max(range * range, 1e-12));

  const double c = std::cos(b.theta);
  const double s = std::sin(b.theta);
  // Faces: +x, -x (span the width) and +y, -y (span the length), in the box frame.
  struct Face {
    Vec2 normal;
    Vec2 center;
    Vec2 along;
    double length;
  };
  const Vec2 ex{c, s};
  const Vec2 ey{-s, c};
  const double hl = 0.5 * b.l;
  const double hw = 0.5 * b.w;
  const Face faces[4] = {
      {ex, {b.x + hl * ex.x, b.y + hl * ex.y}, ey, b.w},
      {{-ex.x, -ex.y}, {b.x - hl * ex.x, b.y - hl * ex.y}, ey, b.w},
      {ey, {b.x + hw * ey.x, b.y + hw * ey.y}, ex, b.l},
      {{-ey.x, -ey.y}, {b.x - hw * ey.x, b.y - hw * ey.y}, ex, b.l},
  };
  std::vector<double> weights(4, 0.0);
  double total = 0.0;
  for (int i = 0; i < 4; ++i) {
    const Vec2 to_sensor{origin.x - faces[i].center.x, origin.y - faces[i].center.y};
    const double norm = std::hypot(to_sensor.x, to_sensor.y);
    const double facing = faces[i].normal.x * to_sensor.x + faces[i].normal.y * to_sensor.y;
    // The sensor must lie strictly in the face's positive half-space.
    if (facing > 0.0 && norm > 0.0) {
      weights[i] = faces[i].length * facing / norm;
      total += weights[i];
    }
  }
  const int count = std::poisson_distribution<int>(expected)(rng);
  if (total <= 0.0 || count == 0) return out;
  std::discrete_distribution<int> pick(weights.begin(), weights.end());
  out.reserve(count);
  for (int k = 0; k < count; ++k) {
    const Face& f = faces[pick(rng)];
    const double u = uniform(rng, -0.5 * f.length, 0.5 * f.length);
    const double z = uniform(rng, 0.0, height);
    const double jx = kSurfaceJitter * std_normal(rng);
    const double jy = kSurfaceJitter * std_normal(rng);
    out.push_back({f.center.x + u * f.along.x + jx, f.center.y + u * f.along.y + jy, z, 0.0});
  }
  return out;
}

Scene generate_scene(const SceneConfig& cfg, std::span<const MotionProfile> profiles,
                     const SpawnLimits& limits) {
  cfg.validate();
  if (static_cast<int>(profiles.size()) != cfg.num_actors) {
    throw std::invalid_argument("generate_scene: need one motion profile per actor (" +
                                std::to_string(cfg.num_actors) + "), got " +
                                std::to_string(profiles.size()));
  }
  for (const MotionProfile& p : profiles) {
    if (p.speed < 0.0) throw std::invalid_argument("generate_scene: speed must be >= 0");
    if (p.kind == MotionKind::kStatic && p.speed != 0.0) {
      throw std::invalid_argument("generate_scene: static profile must have zero speed");
    }
  }
  Rng rng = derived_rng(cfg.rng_seed, 0);

  std::vector<double> times(cfg.num_frames);
  for (int i = 0; i < cfg.num_frames; ++i) times[i] = i * cfg.frame_period;

  std::vector<ActorPlan> plans;
  for (int a = 0; a < cfg.num_actors; ++a) {
    ActorPlan plan;
    plan.actor.actor_id = a;
    plan.actor.profile = profiles[a];
    plan.length = uniform(rng, 3.8, 5.2);
    plan.width = uniform(rng, 1.7, 2.1);
    plan.actor.height = uniform(rng, 1.4, 1.8);
    bool placed = false;
    for (int attempt = 0; attempt < limits.max_retries && !placed; ++attempt) {
      const double r = uniform(rng, limits.min_range, limits.max_range);
      const double bearing = uniform(rng, -geometry::kPi, geometry::kPi);
      plan.start = {cfg.sensor_origin.x + r * std::cos(bearing),
                    cfg.sensor_origin.y + r * std::sin(bearing),
                    uniform(rng, -geometry::kPi, geometry::kPi)};
      placed = true;
      for (double t : times) {
        const BevBox b = box_at(plan, t);
        const double range = std::hypot(b.x - cfg.sensor_origin.x, b.y - cfg.sensor_origin.y);
        if (range < limits.min_range || range > limits.max_range) {
          placed = false;
          break;
        }
        for (const ActorPlan& other : plans) {
          const BevBox o = box_at(other, t);
          if (std::hypot(b.x - o.x, b.y - o.y) < limits.min_separation) {
            placed = false;
            break;
          }
        }
        if (!placed) break;
      }
    }
    if (!placed) {
      throw DataError("generate_scene: could not place actor " + std::to_string(a) + " after " +
                      std::to_string(limits.max_retries) + " attempts");
    }
    plans.push_back(plan);
  }

  Scene scene;
  scene.config = cfg;
  for (const ActorPlan& p : plans) scene.actors.push_back(p.actor);
  scene.frames.resize(cfg.num_frames);
  for (int i = 0; i < cfg.num_frames; ++i) {
    SceneFrame& f = scene.frames[i];
    f.frame_index = i;
    f.t_start = times[i];
    f.t_end = times[i] + cfg.frame_period;
    for (const ActorPlan& p : plans) {
      const BevBox b = box_at(p, times[i]);
      f.gt.push_back({p.actor.actor_id, b});
      PointList pts = sample_surface_points(b, p.actor.height, cfg.sensor_origin,
                                            cfg.points_at_10m, rng);
      for (Point4& q : pts) {
        q.t = uniform(rng, f.t_start, f.t_end);
        f.points.push_back(q);
      }
    }
  }
  return scene;
}

std::vector<std::vector<Detection>> perturb_detections(const Scene& scene, const NoiseModel& noise,
                                                       Rng& rng) {
  noise.validate();
  std::vector<std::vector<Detection>> out(scene.frames.size());
  for (std::size_t i = 0; i < scene.frames.size(); ++i) {
    const SceneFrame& f = scene.frames[i];
    for (const GtBox& g : f.gt) {
      // Every draw happens unconditionally so the stream layout does not
      // depend on the noise parameters.
      const double u_drop = uniform(rng, 0.0, 1.0);
      const double u_flip = uniform(rng, 0.0, 1.0);
      const double nx = std_normal(rng);
      const double ny = std_normal(rng);
      const double nt = std_normal(rng);
      const double nl = std_normal(rng);
      const double nw = std_normal(rng);
      const double ns = std_normal(rng);
      if (u_drop < noise.drop_prob) continue;
      Detection d;
      d.frame = f.frame_index;
      d.box.x = g.box.x + noise.sigma_xy * nx;
      d.box.y = g.box.y + noise.sigma_xy * ny;
      d.box.l = std::max(kMinBoxSide, g.box.l + noise.sigma_lw * nl);
      d.box.w = std::max(kMinBoxSide, g.box.w + noise.sigma_lw * nw);
      double theta = g.box.theta + noise.sigma_theta * nt;
      if (u_flip < noise.heading_flip_prob) theta += geometry::kPi;
      d.box.theta = geometry::normalize_angle(theta);
      const double range =
          std::hypot(g.box.x - scene.config.sensor_origin.x, g.box.y - scene.config.sensor_origin.y);
      const double base = std::max(noise.score_floor, 1.0 - range / 300.0);
      d.score = std::clamp(base + noise.sigma_score * ns, 1e-3, 1.0);
      out[i].push_back(d);
    }
  }
  return out;
}

Scene generate_full_scene(const SceneConfig& cfg, std::span<const MotionProfile> profiles,
                          const NoiseModel& noise, const SpawnLimits& limits) {
  Scene scene = generate_scene(cfg, profiles, limits);
  scene.noise = noise;
  Rng rng = derived_rng(cfg.rng_seed, 1);
  auto dets = perturb_detections(scene, noise, rng);
  for (std::size_t i = 0; i < dets.size(); ++i) scene.frames[i].det = std::move(dets[i]);
  return scene;
}

}  // namespace labelformer::datagen
