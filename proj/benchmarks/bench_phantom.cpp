#include <benchmark/benchmark.h>

#include "r2m/phantom.hpp"

static void BM_GeneratePhantom(benchmark::State& state) {
  r2m::PhantomSpec spec;
  std::uint64_t seed = 0;
  for (auto _ : state) {
    spec.rng_seed = seed++;
    benchmark::DoNotOptimize(r2m::generate_phantom(
        spec, r2m::RadiologyClass::CN, r2m::Malignancy::malignant));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_GeneratePhantom)->Unit(benchmark::kMillisecond);
