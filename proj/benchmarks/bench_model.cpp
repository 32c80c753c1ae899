#include <benchmark/benchmark.h>

#include <map>

#include "labelformer/datagen.hpp"
#include "labelformer/model.hpp"
#include "labelformer/nn/ops.hpp"
#include "labelformer/tracker.hpp"
#include "labelformer/training.hpp"
#include "labelformer/trajectory.hpp"

using namespace labelformer;

namespace {

// Longest noiseless trajectory of a synthetic scene with `frames` frames.
const trajectory::Trajectory& sample_trajectory(int frames) {
  static std::map<int, trajectory::Trajectory> cache;
  auto it = cache.find(frames);
  if (it != cache.end()) return it->second;
  SceneConfig cfg;
  cfg.num_frames = frames;
  cfg.rng_seed = 11;
  datagen::Rng rng(12);
  std::vector<MotionProfile> profiles;
  for (int i = 0; i < cfg.num_actors; ++i) profiles.push_back(datagen::random_profile(rng));
  const Scene scene = datagen::generate_full_scene(cfg, profiles, NoiseModel::zero());
  trajectory::Trajectory best;
  for (const auto& t : tracker::run_tracker(scene)) {
    const tracker::AssociatedTracklet at{t, tracker::associate_gt(t, scene)};
    if (auto traj = trajectory::extract(scene, "bench", at); traj && traj->size() > best.size()) best = *traj;
  }
  return cache.emplace(frames, std::move(best)).first->second;
}

void BM_DeskRefine(benchmark::State& state) {
  const model::LabelFormer net(model::ModelConfig::desk());
  const auto input = sample_trajectory(static_cast<int>(state.range(0))).input();
  for (auto _ : state) benchmark::DoNotOptimize(net.refine(input));
  state.counters["frames"] = static_cast<double>(input.boxes.size());
}
BENCHMARK(BM_DeskRefine)->Arg(10)->Arg(40)->Unit(benchmark::kMillisecond);

void BM_DeskTrainStep(benchmark::State& state) {
  model::LabelFormer net(model::ModelConfig::desk());
  const auto& traj = sample_trajectory(static_cast<int>(state.range(0)));
  const auto sample = training::make_sample(traj);
  for (auto _ : state) {
    nn::Context ctx(net.params(), true, true);
    const auto out = net.forward(ctx, sample.input);
    nn::backward(training::total_loss(out, sample.gt));
    auto grads = net.params().zero_grads();
    ctx.accumulate_grads(grads);
    benchmark::DoNotOptimize(grads);
  }
}
BENCHMARK(BM_DeskTrainStep)->Arg(10)->Arg(40)->Unit(benchmark::kMillisecond);

}  // namespace
