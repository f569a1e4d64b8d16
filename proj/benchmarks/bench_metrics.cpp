#include <benchmark/benchmark.h>

#include "r2m/metrics.hpp"
#include "r2m/rng.hpp"

static void BM_RocAuc(benchmark::State& state) {
  r2m::Rng rng(5);
  std::vector<std::pair<double, int>> scored;
  for (std::int64_t i = 0; i < state.range(0); ++i) {
    scored.emplace_back(rng.uniform(), i % 2);
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(r2m::roc_auc(scored));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RocAuc)->Arg(100)->Arg(10000);
