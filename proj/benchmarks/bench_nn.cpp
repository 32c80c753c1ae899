#include <benchmark/benchmark.h>

#include <random>

#include "labelformer/nn/ops.hpp"

using namespace labelformer::nn;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Real> v(numel(s));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(s), std::move(v), grad);
}

// Desk-sized stage: 32 channels on a 16 x 32 map.
void BM_Conv2dForward(benchmark::State& state) {
  const auto x = random_tensor({1, 32, 16, 32}, 1);
  const auto w = random_tensor({32, 32, 3, 3}, 2);
  const auto b = random_tensor({32}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, 1, 1));
}
BENCHMARK(BM_Conv2dForward)->Unit(benchmark::kMicrosecond);

void BM_Conv2dBackward(benchmark::State& state) {
  const auto x = random_tensor({1, 32, 16, 32}, 1, true);
  const auto w = random_tensor({32, 32, 3, 3}, 2, true);
  for (auto _ : state) backward(sum_all(conv2d(x, w, Tensor(), 1, 1)));
}
BENCHMARK(BM_Conv2dBackward)->Unit(benchmark::kMicrosecond);

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_tensor({n, n}, 4), b = random_tensor({n, n}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Unit(benchmark::kMicrosecond);

}  // namespace
