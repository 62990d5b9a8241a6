#include <benchmark/benchmark.h>

#include "tandem/mat.hpp"
#include "tandem/rng.hpp"

namespace {

template <class S>
tandem::MatT<S> random_mat(int r, int c, std::uint64_t seed) {
  tandem::Rng rng(seed);
  tandem::MatT<S> m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i)
    m.data()[i] = static_cast<S>(rng.gaussian());
  return m;
}

template <class S>
void BM_matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto a = random_mat<S>(n, n, 1);
  const auto b = random_mat<S>(n, n, 2);
  for (auto _ : state) {
    auto c = tandem::matmul(a, b);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2ll * n * n * n);
}
BENCHMARK(BM_matmul<double>)->Arg(64)->Arg(128);
BENCHMARK(BM_matmul<float>)->Arg(64)->Arg(128);

template <class S>
void BM_masked_softmax(benchmark::State& state) {
  const int rows = 129, cols = 209;
  const auto s = random_mat<S>(rows, cols, 3);
  tandem::BoolMat mask(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) mask(i, j) = 1;
  for (auto _ : state) {
    auto p = tandem::masked_softmax(s, mask);
    benchmark::DoNotOptimize(p.data());
  }
  state.SetItemsProcessed(state.iterations() * rows * cols);
}
BENCHMARK(BM_masked_softmax<double>);
BENCHMARK(BM_masked_softmax<float>);

}  // namespace

BENCHMARK_MAIN();
