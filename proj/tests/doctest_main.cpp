#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "r2m/tensor.hpp"

int main(int argc, char** argv) {
  // One BLAS thread per process: the suites drive their own parallelism and
  // oversubscription makes the many small GEMMs crawl.
  r2m::set_blas_threads(1);
  return doctest::Context(argc, argv).run();
}
