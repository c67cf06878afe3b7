#include <benchmark/benchmark.h>

#include "fednnu/plan.hpp"
#include "fednnu/seg_model.hpp"
#include "fednnu/synthetic.hpp"
#include "fednnu/training.hpp"

using namespace fednnu;

namespace {

std::pair<Tensor, Tensor> batch(std::size_t patch, std::size_t n) {
  SyntheticCenterSpec s;
  s.center_id = 1;
  s.image_size = {static_cast<std::uint32_t>(patch), static_cast<std::uint32_t>(patch)};
  s.noise_std = 1.0;
  s.num_cases = static_cast<std::uint32_t>(n);
  s.seed = 7;
  const Dataset ds = gen_center(s);
  Tensor x({n, 1, patch, patch}), y({n, 1, patch, patch});
  for (std::size_t i = 0; i < n; ++i) {
    crop_into(ds[i], patch, 0, 0, x.values().data() + i * patch * patch, y.values().data() + i * patch * patch);
  }
  return {x, y};
}

// Args: patch side, stages.
void BM_Forward(benchmark::State& state) {
  const auto patch = static_cast<std::uint32_t>(state.range(0));
  SegModel m(plan_for(patch, static_cast<std::uint32_t>(state.range(1))));
  m.initialize(1);
  const auto [x, y] = batch(patch, 2);
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(x));
}
BENCHMARK(BM_Forward)->Args({32, 3})->Args({32, 4})->Args({64, 5})->Unit(benchmark::kMillisecond);

void BM_LossAndGrad(benchmark::State& state) {
  const auto patch = static_cast<std::uint32_t>(state.range(0));
  SegModel m(plan_for(patch, static_cast<std::uint32_t>(state.range(1))));
  m.initialize(1);
  const auto [x, y] = batch(patch, 2);
  for (auto _ : state) benchmark::DoNotOptimize(m.loss_and_grad(x, y));
}
BENCHMARK(BM_LossAndGrad)->Args({32, 3})->Args({32, 4})->Args({64, 5})->Unit(benchmark::kMillisecond);

void BM_TrainEpoch(benchmark::State& state) {
  const TrainingPlan plan = plan_for(32, 4);
  SyntheticCenterSpec s;
  s.center_id = 1;
  s.image_size = {40, 40};
  s.noise_std = 1.5;
  s.num_cases = 4;
  s.seed = 3;
  const Dataset prepared = prepare_cases(gen_center(s), plan);
  SegModel m(plan);
  m.initialize(1);
  SgdMomentum opt;
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(train_epoch(m, opt, prepared, 1e-3, seed++));
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
