#include <gtest/gtest.h>

#include <cmath>

#include "labelformer/model.hpp"
#include "labelformer/nn/ops.hpp"
#include "test_support.hpp"

using namespace labelformer;
using namespace labelformer::model;
using lf_test::line_trajectory;
using lf_test::tiny_config;

namespace {

Tensor output_sum(const ForwardOutput& out) {
  return nn::add(lf_test::weighted_sum(out.poses, 7), lf_test::weighted_sum(out.size, 8));
}

std::vector<double> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST(ModelConfig, DeskPresetShapesAndParameterCount) {
  const auto c = ModelConfig::desk();
  EXPECT_EQ(c.nx(), 32u);
  EXPECT_EQ(c.ny(), 16u);
  EXPECT_EQ(c.nz(), 8u);
  EXPECT_EQ(LabelFormer(c).params().total_values(), 193237u);
}

TEST(ModelConfig, ValidateAndKvRoundTrip) {
  auto c = ModelConfig::desk();
  c.num_heads = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ModelConfig::desk();
  c.roi_x = {-4.0, 3.0};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ModelConfig::desk();
  c.window = 5;
  c.variant = Variant::kMlpPool;
  c.pos_encoding = PosEncoding::kAbsolute;
  KvConfig kv;
  c.write_kv(kv);
  const auto back = ModelConfig::from_kv(kv);
  KvConfig again;
  back.write_kv(again);
  EXPECT_EQ(kv.dump(), again.dump());
  EXPECT_EQ(back.window, std::optional<std::size_t>(5));
  EXPECT_THROW(ModelConfig::from_preset("huge"), std::invalid_argument);
}

TEST(Voxelize, BinsOffsetsAndOrder) {
  const auto c = ModelConfig::desk();
  const PointList pts{{0.1, 0.1, 0.1, 0.5}, {-3.9, -1.9, 1.9, 0.0}, {0.2, 0.05, 0.2, 0.4}, {5.0, 0.0, 0.5, 0.0}};
  const auto g = voxelize(pts, 0.4, c);
  ASSERT_EQ(g.point_features.size(), 3u);
  ASSERT_EQ(g.voxel_count(), 2u);
  // Corner voxel (0, 0, 7) first, then (16, 8, 0) holding two points.
  EXPECT_EQ(g.voxel_flat[0], 7);
  EXPECT_EQ(g.voxel_flat[1], (16 * 16 + 8) * 8);
  EXPECT_EQ(g.voxel_pillar(1), 16 * 16 + 8);
  EXPECT_EQ(g.voxel_z(0), 7);
  EXPECT_EQ(g.point_voxel, (std::vector<std::int64_t>{0, 1, 1}));
  EXPECT_NEAR(g.point_features[0][0], -3.9 - (-3.875), 1e-12);
  EXPECT_NEAR(g.point_features[1][0], 0.1 - 0.125, 1e-12);
  EXPECT_NEAR(g.point_features[1][3], 0.1, 1e-12);
  EXPECT_NEAR(g.point_features[2][1], 0.05 - 0.125, 1e-12);
  EXPECT_EQ(voxelize({}, 0.0, c).voxel_count(), 0u);
}

TEST(PositionEncoding, AlibiExact) {
  const std::size_t M = 9, H = 4;
  const auto b = alibi_bias(M, H);
  for (std::size_t h = 0; h < H; ++h) {
    const double m = std::exp2(-8.0 * static_cast<double>(h + 1) / H);
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < M; ++j) {
        EXPECT_EQ(b.at({h, i, j}), -m * std::abs(static_cast<double>(i) - static_cast<double>(j)));
      }
  }
  EXPECT_EQ(alibi_bias(3, 2, 0.5).at({1, 0, 2}), -1.0);
  EXPECT_THROW(alibi_bias(0, 1), std::invalid_argument);
}

TEST(PositionEncoding, AbsoluteSinusoid) {
  const auto pe = absolute_pos_encoding(4, 6);
  EXPECT_EQ(pe.at({0, 0}), 0.0);
  EXPECT_EQ(pe.at({0, 1}), 1.0);
  EXPECT_NEAR(pe.at({3, 2}), std::sin(3.0 * std::pow(10000.0, -2.0 / 6.0)), 1e-15);
  EXPECT_THROW(absolute_pos_encoding(4, 5), std::invalid_argument);
}

TEST(Attention, SingleHeadMatchesDenseOracle) {
  auto c = tiny_config();
  c.num_heads = 1;
  c.pos_encoding = PosEncoding::kAbsolute;
  LabelFormer m(c);
  lf_test::randomize_params(m.params(), 3, 0.5);
  std::mt19937_64 rng(4);
  const std::size_t M = 7, D = c.d_model;
  const auto g = lf_test::random_values(M * D, rng);
  nn::Context ctx(m.params(), false, false);
  const auto out = m.attention_block(ctx, 1, Tensor::from({M, D}, g), Tensor());
  const auto ref = lf_test::dense_attention_block(m.params(), "attn1", g, M, D, 1, {});
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out.values()[i], ref[i], 1e-10);
}

TEST(Attention, MultiHeadWithAlibiMatchesDenseOracle) {
  const auto c = tiny_config();
  LabelFormer m(c);
  lf_test::randomize_params(m.params(), 5, 0.5);
  std::mt19937_64 rng(6);
  const std::size_t M = 6, D = c.d_model;
  const auto g = lf_test::random_values(M * D, rng);
  const auto bias = m.attention_bias(M);
  nn::Context ctx(m.params(), false, false);
  const auto out = m.attention_block(ctx, 0, Tensor::from({M, D}, g), bias);
  const auto ref = lf_test::dense_attention_block(m.params(), "attn0", g, M, D, c.num_heads, to_vec(bias));
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out.values()[i], ref[i], 1e-10);
}

TEST(Attention, WindowCoveringSequenceEqualsFull) {
  auto c = tiny_config();
  LabelFormer full(c);
  lf_test::randomize_params(full.params(), 9);
  c.window = 6;
  LabelFormer windowed(c);
  for (std::size_t i = 0; i < full.params().size(); ++i) windowed.params()[i].value = full.params()[i].value;
  const auto in = line_trajectory(7, 8.0, 20);
  const auto a = full.refine(in), b = windowed.refine(in);
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_EQ(a.poses[i].x, b.poses[i].x);
    EXPECT_EQ(a.poses[i].theta, b.poses[i].theta);
  }
  EXPECT_EQ(a.l, b.l);
}

TEST(Attention, WindowLimitsReceptiveField) {
  auto c = tiny_config();
  c.window = 1;
  LabelFormer m(c);
  lf_test::randomize_params(m.params(), 10);
  auto in = line_trajectory(9, 8.0, 20);
  const auto before = m.refine(in);
  // Two blocks with window 1 reach two frames; frame 8 cannot affect frame 0.
  in.boxes[8].x += 0.5;
  in.boxes[8].theta += 0.1;
  const auto after = m.refine(in);
  EXPECT_EQ(before.poses[0].x, after.poses[0].x);
  EXPECT_EQ(before.poses[0].y, after.poses[0].y);
  EXPECT_NE(before.poses[7].x, after.poses[7].x);
}

TEST(Forward, FreshModelReturnsInitialization) {
  const LabelFormer m(tiny_config());
  auto in = line_trajectory(5, 5.0, 30);
  in.boxes[0].l = 4.0;
  in.boxes[4].w = 2.4;
  const auto r = m.refine(in);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(r.poses[i].x, in.boxes[i].x);
    EXPECT_EQ(r.poses[i].y, in.boxes[i].y);
    EXPECT_EQ(r.poses[i].theta, in.boxes[i].theta);
  }
  EXPECT_NEAR(r.l, (4.0 + 4 * 4.5) / 5.0, 1e-12);
  EXPECT_NEAR(r.w, (2.4 + 4 * 1.9) / 5.0, 1e-12);
}

TEST(Forward, SingleFrameNoPointsAndLongSequences) {
  LabelFormer m(tiny_config());
  lf_test::randomize_params(m.params(), 11, 0.1);
  auto one = line_trajectory(1, 0.0, 0);
  const auto r1 = m.refine(one);
  ASSERT_EQ(r1.poses.size(), 1u);
  const auto r40 = m.refine(line_trajectory(40, 10.0, 10));
  ASSERT_EQ(r40.poses.size(), 40u);
  for (const auto& p : r40.poses) EXPECT_TRUE(std::isfinite(p.x) && std::isfinite(p.theta));
  EXPECT_GE(r40.l, 0.1);
}

TEST(Forward, RejectsNonCanonicalInput) {
  const LabelFormer m(tiny_config());
  auto in = line_trajectory(5, 5.0, 3);
  in.boxes[2].x = 0.3;
  EXPECT_THROW(m.refine(in), std::invalid_argument);
  in = line_trajectory(5, 5.0, 3);
  in.points.pop_back();
  EXPECT_THROW(m.refine(in), std::invalid_argument);
}

TEST(Forward, PointCapIsDeterministic) {
  auto c = tiny_config();
  c.max_points_per_frame = 8;
  const LabelFormer m(c);
  const auto in = line_trajectory(3, 5.0, 50);
  const auto a = m.frame_points(in, 1), b = m.frame_points(in, 1);
  ASSERT_EQ(a.size(), 8u);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(a[i].x, b[i].x);
}

TEST(Forward, AblationSwitchesChangeParameters) {
  auto c = tiny_config();
  const auto full = LabelFormer(c).params().size();
  c.use_point_encoder = false;
  EXPECT_LT(LabelFormer(c).params().size(), full);
  c = tiny_config();
  c.use_box_encoder = false;
  EXPECT_EQ(LabelFormer(c).refine(line_trajectory(3, 5.0, 10)).poses.size(), 3u);
  c.use_point_encoder = false;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(GradCheck, TinyModelAllVariants) {
  const auto in = line_trajectory(4, 6.0, 12);
  for (int variant = 0; variant < 3; ++variant) {
    auto c = tiny_config();
    if (variant == 1) c.variant = Variant::kMlpPool;
    if (variant == 2) {
      c.pos_encoding = PosEncoding::kAbsolute;
      c.window = 1;
    }
    LabelFormer m(c);
    lf_test::randomize_params(m.params(), 20 + variant);
    const auto r = lf_test::model_grad_check(m, in, output_sum, 3);
    // ReLU kinks within h of an activation cost a few 1e-4 on some entries.
    EXPECT_LE(r.max_rel_error, 1e-3) << "variant " << variant << " worst " << r.worst;
    EXPECT_GT(r.checked, 100u);
  }
}
