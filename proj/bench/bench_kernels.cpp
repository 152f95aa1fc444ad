#include <benchmark/benchmark.h>

#include "ufcmil/kernels.hpp"
#include "ufcmil/rng.hpp"

namespace {

using ufcmil::KeyedRng;

std::vector<float> random_matrix(std::size_t n, std::uint64_t key) {
  KeyedRng rng{key};
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform() * 2.0 - 1.0);
  return v;
}

template <bool Parallel>
void BM_gemm_nn(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n * n, 1), b = random_matrix(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      ufcmil::kernels::parallel::gemm_nn<float>(n, n, n, a, b, c);
    else
      ufcmil::kernels::serial::gemm_nn<float>(n, n, n, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}

template <bool Parallel>
void BM_gemm_nt(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n * n, 3), b = random_matrix(n * n, 4);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      ufcmil::kernels::parallel::gemm_nt<float>(n, n, n, a, b, c);
    else
      ufcmil::kernels::serial::gemm_nt<float>(n, n, n, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}

}  // namespace

BENCHMARK(BM_gemm_nn<false>)->Arg(32)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_gemm_nn<true>)->Arg(32)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_gemm_nt<false>)->Arg(32)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_gemm_nt<true>)->Arg(32)->Arg(64)->Arg(128)->Arg(256);

BENCHMARK_MAIN();
