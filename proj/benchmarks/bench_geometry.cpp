#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "labelformer/geometry.hpp"
#include "labelformer/tracker.hpp"

using namespace labelformer;

namespace {

std::vector<geometry::BevBox> random_boxes(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> c(-2.0, 2.0), s(0.5, 5.0), th(-geometry::kPi, geometry::kPi);
  std::vector<geometry::BevBox> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({c(rng), c(rng), s(rng), s(rng), th(rng)});
  return out;
}

void BM_RotatedIou(benchmark::State& state) {
  const auto a = random_boxes(1024, 1), b = random_boxes(1024, 2);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(geometry::rotated_iou(a[i], b[i]));
    i = (i + 1) & 1023;
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_RotatedIou);

void BM_Nms(benchmark::State& state) {
  const auto boxes = random_boxes(static_cast<std::size_t>(state.range(0)), 3);
  std::vector<Detection> dets;
  for (std::size_t i = 0; i < boxes.size(); ++i) dets.push_back({boxes[i], 0.1 + 0.8 * static_cast<double>(i % 97) / 97.0, 0});
  for (auto _ : state) benchmark::DoNotOptimize(tracker::nms(dets, 0.1));
}
BENCHMARK(BM_Nms)->Arg(16)->Arg(64);

}  // namespace
