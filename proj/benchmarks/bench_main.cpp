#include <benchmark/benchmark.h>

#include "r2m/tensor.hpp"

int main(int argc, char** argv) {
  r2m::set_blas_threads(1);
  benchmark::Initialize(&argc, argv);
  benchmark::RunSpecifiedBenchmarks();
  return 0;
}
