#include <benchmark/benchmark.h>

#include "r2m/net.hpp"
#include "r2m/phantom.hpp"
#include "r2m/train.hpp"

namespace {

r2m::VolumeSample desk_sample() {
  r2m::PhantomSpec spec;
  spec.rng_seed = 7;
  return r2m::generate_phantom(spec, r2m::RadiologyClass::MGGO,
                               r2m::Malignancy::malignant)
      .sample;
}

}  // namespace

static void BM_TwinForward(benchmark::State& state) {
  const auto sample = desk_sample();
  const auto params = r2m::R2MNetParams::init(r2m::ModelConfig::desk(), 1);
  const auto x = sample.to_tensor();
  for (auto _ : state) {
    benchmark::DoNotOptimize(r2m::r2mnet_forward(x, params));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_TwinForward)->Unit(benchmark::kMillisecond);

static void BM_SampleGradient(benchmark::State& state) {
  const auto sample = desk_sample();
  const auto params = r2m::R2MNetParams::init(r2m::ModelConfig::desk(), 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(r2m::sample_gradient(params, sample, 0.5));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_SampleGradient)->Unit(benchmark::kMillisecond);
