#include <benchmark/benchmark.h>

#include "r2m/rng.hpp"
#include "r2m/tensor.hpp"

namespace {

r2m::Tensor rnd(r2m::Shape s, r2m::Rng& rng) {
  std::vector<double> d(static_cast<std::size_t>(r2m::shape_numel(s)));
  for (auto& v : d) v = rng.uniform(-1, 1);
  return r2m::Tensor::from(std::move(d), std::move(s));
}

void conv_args(benchmark::internal::Benchmark* b) {
  // desk stages: channels x resolution
  b->Args({8, 32})->Args({16, 16})->Args({32, 8})->Args({64, 4});
}

}  // namespace

static void BM_Conv3dGemm(benchmark::State& state) {
  r2m::Rng rng(1);
  const auto c = state.range(0), e = state.range(1);
  auto x = rnd({c, e, e, e}, rng);
  auto w = rnd({c, c, 3, 3, 3}, rng);
  auto b = rnd({c}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(r2m::conv3d(x, w, b, 1, 1));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_Conv3dGemm)->Apply(conv_args)->Unit(benchmark::kMillisecond);

static void BM_Conv3dDirect(benchmark::State& state) {
  r2m::Rng rng(1);
  const auto c = state.range(0), e = state.range(1);
  auto x = rnd({c, e, e, e}, rng);
  auto w = rnd({c, c, 3, 3, 3}, rng);
  auto b = rnd({c}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(r2m::conv3d_direct(x, w, b, 1, 1));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_Conv3dDirect)->Args({8, 32})->Args({16, 16})->Unit(benchmark::kMillisecond);

static void BM_Conv3dBackward(benchmark::State& state) {
  r2m::Rng rng(1);
  const auto c = state.range(0), e = state.range(1);
  auto x = rnd({c, e, e, e}, rng);
  auto w = rnd({c, c, 3, 3, 3}, rng);
  auto b = rnd({c}, rng);
  for (auto _ : state) {
    r2m::Tape tape;
    auto xt = tape.leaf(x);
    auto wt = tape.leaf(w);
    auto bt = tape.leaf(b);
    auto loss = r2m::sum_all(r2m::conv3d(xt, wt, bt, 1, 1));
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.gradient(wt));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_Conv3dBackward)->Apply(conv_args)->Unit(benchmark::kMillisecond);
