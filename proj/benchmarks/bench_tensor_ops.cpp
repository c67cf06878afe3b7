#include <benchmark/benchmark.h>

#include <random>

#include "fednnu/tensor_ops.hpp"

using namespace fednnu;

namespace {

Tensor random_tensor(const Shape& dims, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t(dims, 0.0);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Args: spatial side, input channels, output channels.
void BM_Conv2d(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto cin = static_cast<std::size_t>(state.range(1));
  const auto cout = static_cast<std::size_t>(state.range(2));
  const Tensor x = random_tensor({2, cin, side, side}, 1);
  const Tensor k = random_tensor({cout, cin, 3, 3}, 2);
  const Tensor b = random_tensor({cout}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, k, b));
  state.SetItemsProcessed(state.iterations() * 2 * static_cast<std::int64_t>(side * side * cin * cout * 9));
}
BENCHMARK(BM_Conv2d)->Args({32, 1, 32})->Args({32, 96, 32})->Args({16, 192, 64})->Args({8, 384, 128})->Args({4, 128, 256});

void BM_Conv2dBackward(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto cin = static_cast<std::size_t>(state.range(1));
  const auto cout = static_cast<std::size_t>(state.range(2));
  const Tensor x = random_tensor({2, cin, side, side}, 1);
  const Tensor k = random_tensor({cout, cin, 3, 3}, 2);
  const Tensor g = random_tensor({2, cout, side, side}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_backward(x, k, g));
  state.SetItemsProcessed(state.iterations() * 4 * static_cast<std::int64_t>(side * side * cin * cout * 9));
}
BENCHMARK(BM_Conv2dBackward)->Args({32, 96, 32})->Args({16, 192, 64})->Args({8, 384, 128});

void BM_Downsample(benchmark::State& state) {
  const Tensor x = random_tensor({2, 64, 32, 32}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(downsample2x(x));
}
BENCHMARK(BM_Downsample);

void BM_Upsample(benchmark::State& state) {
  const Tensor x = random_tensor({2, 64, 16, 16}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(upsample2x(x));
}
BENCHMARK(BM_Upsample);

}  // namespace

BENCHMARK_MAIN();
