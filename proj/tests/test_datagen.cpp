#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "labelformer/datagen.hpp"
#include "labelformer/error.hpp"
#include "labelformer/scene.hpp"

using namespace labelformer;
using datagen::Rng;

namespace {

Scene two_actor_scene(int frames, std::uint64_t seed) {
  SceneConfig cfg;
  cfg.num_actors = 2;
  cfg.num_frames = frames;
  cfg.rng_seed = seed;
  const std::vector<MotionProfile> profiles{{MotionKind::kStatic, 0, 0, 0},
                                            {MotionKind::kConstantVelocity, 10.0, 0, 0}};
  return datagen::generate_full_scene(cfg, profiles, NoiseModel{});
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

double stddev(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / (v.size() - 1));
}

}  // namespace

TEST(Propagate, Profiles) {
  const geometry::Pose start{1.0, 2.0, 0.3};
  const auto s = datagen::propagate(start, {MotionKind::kStatic, 0, 0, 0}, 3.0);
  EXPECT_DOUBLE_EQ(s.x, 1.0);
  EXPECT_DOUBLE_EQ(s.y, 2.0);
  const auto a = datagen::propagate({0, 0, 0}, {MotionKind::kConstantVelocity, 10.0, 0, 0}, 0.1);
  const auto b = datagen::propagate({0, 0, 0}, {MotionKind::kConstantVelocity, 10.0, 0, 0}, 0.2);
  EXPECT_NEAR(std::hypot(b.x - a.x, b.y - a.y), 1.0, 1e-12);
  for (int i = 0; i < 10; ++i) {
    const auto p = datagen::propagate(start, {MotionKind::kTurning, 5.0, 0.3, 0}, i * 0.1);
    EXPECT_NEAR(geometry::angular_distance(p.theta, start.theta + i * 0.1 * 0.3), 0.0, 1e-12);
  }
  // Decelerating actors stop instead of reversing.
  const auto d1 = datagen::propagate({0, 0, 0}, {MotionKind::kAccelerating, 2.0, 0, -1.0}, 2.0);
  const auto d2 = datagen::propagate({0, 0, 0}, {MotionKind::kAccelerating, 2.0, 0, -1.0}, 10.0);
  EXPECT_DOUBLE_EQ(d1.x, d2.x);
  EXPECT_NEAR(d1.x, 2.0, 1e-12);
}

TEST(GenerateScene, StaticAndConstantVelocity) {
  const Scene scene = two_actor_scene(10, 3);
  ASSERT_EQ(scene.frames.size(), 10u);
  const auto first = *scene.gt_box(0, 0);
  for (int i = 0; i < 10; ++i) {
    const auto g = *scene.gt_box(0, i);
    EXPECT_EQ(g.x, first.x);
    EXPECT_EQ(g.y, first.y);
    EXPECT_EQ(g.theta, first.theta);
  }
  for (int i = 1; i < 10; ++i) {
    const auto p = *scene.gt_box(1, i - 1), q = *scene.gt_box(1, i);
    EXPECT_NEAR(std::hypot(q.x - p.x, q.y - p.y), 1.0, 1e-9);
    EXPECT_EQ(p.l, q.l);
    EXPECT_EQ(p.w, q.w);
  }
}

TEST(GenerateScene, PointTimestampsInsideFrame) {
  const Scene scene = two_actor_scene(5, 4);
  for (const auto& f : scene.frames) {
    EXPECT_NEAR(f.t_end - f.t_start, 0.1, 1e-12);
    for (const auto& p : f.points) {
      EXPECT_GE(p.t, f.t_start);
      EXPECT_LE(p.t, f.t_end);
    }
  }
}

TEST(GenerateScene, ProfileCountMismatchAndImpossiblePlacement) {
  SceneConfig cfg;
  cfg.num_actors = 2;
  const std::vector<MotionProfile> one{{}};
  EXPECT_THROW(datagen::generate_scene(cfg, one), std::invalid_argument);
  cfg.num_actors = 30;
  std::vector<MotionProfile> many(30);
  datagen::SpawnLimits tight;
  tight.max_range = 8.0;
  tight.max_retries = 5;
  EXPECT_THROW(datagen::generate_scene(cfg, many, tight), DataError);
}

TEST(SurfacePoints, DensityAndInverseSquare) {
  Rng rng(1);
  EXPECT_TRUE(datagen::sample_surface_points({10, 0, 4, 2, 0}, 1.5, {0, 0}, 0.0, rng).empty());
  std::vector<double> near_counts, far_counts;
  for (int i = 0; i < 2000; ++i) {
    near_counts.push_back(datagen::sample_surface_points({10, 0, 4, 2, 0.4}, 1.5, {0, 0}, 50.0, rng).size());
    far_counts.push_back(datagen::sample_surface_points({20, 0, 4, 2, 0.4}, 1.5, {0, 0}, 50.0, rng).size());
  }
  EXPECT_NEAR(mean(near_counts), 50.0, 1.0);
  EXPECT_NEAR(mean(far_counts), 12.5, 0.5);
}

TEST(SurfacePoints, HiddenFacesNeverSampled) {
  Rng rng(2);
  // Box straight ahead with heading 0: only the -x face faces the sensor.
  const BevBox b{10, 0, 4, 2, 0};
  const auto pts = datagen::sample_surface_points(b, 1.5, {0, 0}, 500.0, rng);
  ASSERT_FALSE(pts.empty());
  for (const auto& p : pts) {
    EXPECT_NEAR(p.x, 8.0, 0.15);
    EXPECT_GE(p.z, 0.0);
    EXPECT_LE(p.z, 1.5);
  }
}

TEST(PerturbDetections, IdentityNoiseAndDrop) {
  Scene scene = two_actor_scene(6, 5);
  Rng rng(3);
  const auto exact = datagen::perturb_detections(scene, NoiseModel::zero(), rng);
  for (std::size_t i = 0; i < scene.frames.size(); ++i) {
    ASSERT_EQ(exact[i].size(), scene.frames[i].gt.size());
    for (std::size_t k = 0; k < exact[i].size(); ++k) {
      const auto& g = scene.frames[i].gt[k].box;
      const auto& d = exact[i][k];
      EXPECT_EQ(d.box.x, g.x);
      EXPECT_EQ(d.box.y, g.y);
      EXPECT_EQ(d.box.l, g.l);
      EXPECT_EQ(d.box.theta, g.theta);
      const double range = std::hypot(g.x, g.y);
      EXPECT_DOUBLE_EQ(d.score, std::max(0.3, 1.0 - range / 300.0));
    }
  }
  NoiseModel drop = NoiseModel::zero();
  drop.drop_prob = 1.0;
  for (const auto& f : datagen::perturb_detections(scene, drop, rng)) EXPECT_TRUE(f.empty());
}

TEST(PerturbDetections, EmpiricalSigma) {
  SceneConfig cfg;
  cfg.num_actors = 1;
  cfg.num_frames = 10000;
  cfg.points_at_10m = 0.0;
  const std::vector<MotionProfile> profiles{{MotionKind::kStatic, 0, 0, 0}};
  const Scene scene = datagen::generate_scene(cfg, profiles);
  NoiseModel noise = NoiseModel::zero();
  noise.sigma_xy = 0.25;
  Rng rng(4);
  const auto dets = datagen::perturb_detections(scene, noise, rng);
  std::vector<double> dx;
  for (std::size_t i = 0; i < dets.size(); ++i) dx.push_back(dets[i][0].box.x - scene.frames[i].gt[0].box.x);
  EXPECT_NEAR(stddev(dx), 0.25, 0.25 * 0.05);
}

TEST(SceneIo, RoundTripAndDeterminism) {
  const Scene a = two_actor_scene(5, 6);
  std::ostringstream first;
  write_scene(first, a);
  std::istringstream in(first.str());
  const Scene b = read_scene(in);
  std::ostringstream second;
  write_scene(second, b);
  EXPECT_EQ(first.str(), second.str());
  ASSERT_EQ(b.frames.size(), a.frames.size());
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    ASSERT_EQ(a.frames[i].points.size(), b.frames[i].points.size());
    for (std::size_t k = 0; k < a.frames[i].points.size(); ++k) {
      const double x = a.frames[i].points[k].x;
      EXPECT_NEAR(b.frames[i].points[k].x, x, 5e-9 * std::max(1.0, std::abs(x)));
    }
    ASSERT_EQ(a.frames[i].det.size(), b.frames[i].det.size());
  }
  std::ostringstream again;
  write_scene(again, two_actor_scene(5, 6));
  EXPECT_EQ(first.str(), again.str());
}

TEST(SceneIo, EmptySceneAndSingleFrame) {
  SceneConfig cfg;
  cfg.num_actors = 0;
  cfg.num_frames = 1;
  const Scene s = datagen::generate_full_scene(cfg, {}, NoiseModel{});
  std::stringstream ss;
  write_scene(ss, s);
  const Scene r = read_scene(ss);
  EXPECT_EQ(r.frames.size(), 1u);
  EXPECT_TRUE(r.actors.empty());
}

TEST(SceneIo, TruncatedFileNamesLine) {
  const Scene a = two_actor_scene(3, 7);
  std::ostringstream out;
  write_scene(out, a);
  std::string text = out.str();
  const auto second_line = text.find('\n') + 1;
  text = text.substr(0, second_line + 40);
  std::istringstream in(text);
  try {
    read_scene(in, "cut.jsonl");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("cut.jsonl:2"), std::string::npos);
  }
}
