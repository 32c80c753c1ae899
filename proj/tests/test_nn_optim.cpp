#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "labelformer/error.hpp"
#include "labelformer/kv_config.hpp"
#include "labelformer/nn/checkpoint.hpp"
#include "labelformer/nn/ops.hpp"
#include "labelformer/nn/optim.hpp"

using namespace labelformer;
using namespace labelformer::nn;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("lf_optim_" + std::to_string(::getpid()) + "_" + name);
}

ParameterStore small_store() {
  ParameterStore s;
  s.add("a.w", {2, 2}, {1.0, -2.0, 3.5, 0.25});
  s.add("a.b", {2}, {0.1, -0.1});
  return s;
}

}  // namespace

TEST(AdamW, MatchesScalarRecurrence) {
  AdamWConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.1;
  AdamWState st{cfg, {}, {}, 0};
  std::vector<Real> p{1.0, -0.5};
  std::vector<Real> ref = p;
  Real m[2] = {0, 0}, v[2] = {0, 0};
  for (int t = 1; t <= 5; ++t) {
    const std::vector<std::vector<Real>> g{{0.3 * t, -0.2 / t}};
    std::vector<Real>* params[] = {&p};
    adamw_step(st, params, g);
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[0][i];
      v[i] = 0.999 * v[i] + 0.001 * g[0][i] * g[0][i];
      const Real mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      ref[i] -= 0.01 * (mh / (std::sqrt(vh) + 1e-8) + 0.1 * ref[i]);
    }
    EXPECT_NEAR(p[0], ref[0], 1e-14);
    EXPECT_NEAR(p[1], ref[1], 1e-14);
  }
  EXPECT_EQ(st.step, 5);
}

TEST(AdamW, NonFiniteGradientLeavesParamsUntouched) {
  AdamWState st;
  std::vector<Real> p{1.0, 2.0};
  std::vector<Real>* params[] = {&p};
  const std::vector<std::vector<Real>> g{{0.1, std::nan("")}};
  EXPECT_THROW(adamw_step(st, params, g), NumericError);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], 2.0);
}

TEST(LrSchedule, WarmupCosineFloor) {
  const LrSchedule s{1e-3, 2.0, 10.0, 0.1};
  EXPECT_EQ(lr_at(s, 0.0), 0.0);
  EXPECT_NEAR(lr_at(s, 1.0), 5e-4, 1e-18);
  EXPECT_NEAR(lr_at(s, 2.0), 1e-3, 1e-18);
  EXPECT_NEAR(lr_at(s, 6.0), 1e-3 * (0.1 + 0.9 * 0.5), 1e-15);
  EXPECT_NEAR(lr_at(s, 10.0), 1e-4, 1e-18);
  for (double e = 2.0; e < 10.0; e += 0.25) EXPECT_GE(lr_at(s, e), lr_at(s, e + 0.25));
  EXPECT_THROW(lr_at(s, 10.5), std::invalid_argument);
  EXPECT_THROW(lr_at(LrSchedule{1e-3, 10.0, 10.0, 0.1}, 1.0), std::invalid_argument);
  EXPECT_NEAR(lr_at(LrSchedule{1e-3, 0.0, 10.0, 0.1}, 0.0), 1e-3, 1e-18);
}

TEST(ClipGradNorm, ScalesOnlyAboveThreshold) {
  std::vector<std::vector<Real>> g{{3.0}, {4.0}};
  EXPECT_DOUBLE_EQ(clip_grad_norm(g, 10.0), 5.0);
  EXPECT_EQ(g[0][0], 3.0);
  EXPECT_DOUBLE_EQ(clip_grad_norm(g, 1.0), 5.0);
  EXPECT_NEAR(g[0][0], 0.6, 1e-15);
  EXPECT_NEAR(g[1][0], 0.8, 1e-15);
}

TEST(ParameterStore, IndicesAndInit) {
  std::mt19937_64 rng(1);
  ParameterStore s;
  EXPECT_EQ(s.add_zeros("z", {3}), 0u);
  EXPECT_EQ(s.add_uniform("u", {4, 25}, 25, rng), 1u);
  EXPECT_EQ(s.index_of("u"), 1u);
  EXPECT_EQ(s.total_values(), 103u);
  for (Real v : s[1].value) EXPECT_LE(std::abs(v), 0.2);
  EXPECT_THROW(s.add_zeros("z", {1}), std::invalid_argument);
}

TEST(Context, AccumulatesGradsPerParameter) {
  const ParameterStore s = small_store();
  Context ctx(s, true, false);
  const Tensor loss = sum_all(square(ctx.param(1)));
  backward(loss);
  auto grads = s.zero_grads();
  ctx.accumulate_grads(grads);
  EXPECT_TRUE(std::all_of(grads[0].begin(), grads[0].end(), [](Real x) { return x == 0.0; }));
  EXPECT_DOUBLE_EQ(grads[1][0], 0.2);
  EXPECT_DOUBLE_EQ(grads[1][1], -0.2);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto path = temp_path("rt.ckpt");
  const ParameterStore a = small_store();
  save_checkpoint(path, a, "model.d_model = 64\n");
  ParameterStore b = small_store();
  for (std::size_t i = 0; i < b.size(); ++i) std::fill(b[i].value.begin(), b[i].value.end(), 0.0);
  EXPECT_EQ(load_checkpoint(path, b), "model.d_model = 64\n");
  EXPECT_EQ(read_checkpoint_config(path), "model.d_model = 64\n");
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].value, b[i].value);
  std::filesystem::remove(path);
}

TEST(Checkpoint, MismatchesAreDataErrors) {
  const auto path = temp_path("mm.ckpt");
  save_checkpoint(path, small_store(), "");
  ParameterStore renamed;
  renamed.add("a.w", {2, 2}, std::vector<Real>(4));
  renamed.add("a.c", {2}, std::vector<Real>(2));
  EXPECT_THROW(load_checkpoint(path, renamed), DataError);
  ParameterStore reshaped;
  reshaped.add("a.w", {4}, std::vector<Real>(4));
  reshaped.add("a.b", {2}, std::vector<Real>(2));
  EXPECT_THROW(load_checkpoint(path, reshaped), DataError);
  ParameterStore fewer;
  fewer.add("a.w", {2, 2}, std::vector<Real>(4));
  EXPECT_THROW(load_checkpoint(path, fewer), DataError);

  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 3);
  ParameterStore s = small_store();
  EXPECT_THROW(load_checkpoint(path, s), DataError);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "NOTACKPT 1\n";
  }
  EXPECT_THROW(read_checkpoint_config(path), DataError);
  std::filesystem::remove(path);
  EXPECT_THROW(read_checkpoint_config(path), DataError);
}

TEST(KvConfig, ParseTypedGettersAndDump) {
  const auto kv = KvConfig::parse("top = 1\n[model]\nd_model = 64\nwindow = 5\n[train]\nlr = 1e-3\nperturb = false\n");
  EXPECT_EQ(kv.get_int("top", 0), 1);
  EXPECT_EQ(kv.get_int("model.d_model", 0), 64);
  EXPECT_DOUBLE_EQ(kv.get_double("train.lr", 0.0), 1e-3);
  EXPECT_FALSE(kv.get_bool("train.perturb", true));
  EXPECT_EQ(kv.get_string("missing", "x"), "x");
  EXPECT_THROW(kv.get_int("train.lr", 0), std::invalid_argument);
  EXPECT_THROW(kv.require_known({"top", "model.d_model"}), std::invalid_argument);
  const auto again = KvConfig::parse(kv.dump());
  EXPECT_EQ(again.values(), kv.values());
}

TEST(KvConfig, MergeAndSetRoundTripDoubles) {
  KvConfig a = KvConfig::parse("[x]\np = 1\nq = 2\n");
  KvConfig b;
  b.set("x.q", 0.1 + 0.2);
  a.merge(b);
  EXPECT_EQ(a.get_double("x.q", 0.0), 0.1 + 0.2);
  EXPECT_EQ(a.get_int("x.p", 0), 1);
  EXPECT_THROW(KvConfig::parse("[broken\n", "bad.ini"), ParseError);
}
