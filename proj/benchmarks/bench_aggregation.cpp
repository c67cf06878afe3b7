#include <benchmark/benchmark.h>

#include <random>

#include "fednnu/aggregation.hpp"
#include "fednnu/plan.hpp"
#include "fednnu/seg_model.hpp"
#include "fednnu/wire.hpp"

using namespace fednnu;

namespace {

std::vector<StateDict> federation(std::size_t nodes, std::uint32_t min_stages) {
  std::vector<StateDict> dicts;
  for (std::size_t i = 0; i < nodes; ++i) {
    const std::uint32_t stages = min_stages + static_cast<std::uint32_t>(i % 2);
    SegModel m(plan_for(std::uint32_t{1} << (stages + 1), stages));
    m.initialize(i + 1);
    StateDict sd(static_cast<NodeId>(i + 1), 0);
    for (const auto& [id, t] : m.parameters().entries()) sd.insert(id, t);
    dicts.push_back(std::move(sd));
  }
  return dicts;
}

// Args: nodes, smallest stage count (odd nodes get one more stage).
void BM_MatchAndAggregate(benchmark::State& state) {
  const auto dicts = federation(static_cast<std::size_t>(state.range(0)), static_cast<std::uint32_t>(state.range(1)));
  for (auto _ : state) {
    const CompatibleSet c = match_layers(dicts, MatchMode::Strict);
    benchmark::DoNotOptimize(aggregate_asym(dicts, c));
  }
}
BENCHMARK(BM_MatchAndAggregate)->Args({2, 4})->Args({4, 4})->Args({4, 6})->Unit(benchmark::kMillisecond);

void BM_EncodeDecode(benchmark::State& state) {
  const auto dicts = federation(1, static_cast<std::uint32_t>(state.range(0)));
  std::int64_t bytes = 0;
  for (auto _ : state) {
    const Bytes b = encode_state_dict(dicts[0]);
    bytes += static_cast<std::int64_t>(b.size());
    benchmark::DoNotOptimize(decode_state_dict(b));
  }
  state.SetBytesProcessed(bytes);
}
BENCHMARK(BM_EncodeDecode)->Arg(4)->Arg(6)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
