#pragma once

// Dense GEMM kernels. `serial` is the reference implementation kept for
// testing and benchmarking; `parallel` splits output rows across OpenMP
// threads. Both accumulate in double and produce identical results because
// each output element is computed by exactly one thread in the same order.

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

namespace ufcmil::kernels {

/// Sets the OpenMP worker count; 0 keeps the runtime default.
void set_num_threads(int n);
int max_threads();
bool in_parallel_region();

namespace serial {

// C[m×n] = A[m×k] · B[k×n]
template <class T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a,
             std::span<const T> b, std::span<T> c) {
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const T* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const T* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
    }
    T* crow = c.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = static_cast<T>(acc[j]);
  }
}

// C[m×n] = A[m×k] · B[n×k]ᵀ
template <class T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a,
             std::span<const T> b, std::span<T> c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += double(arow[p]) * brow[p];
      c[i * n + j] = static_cast<T>(s);
    }
  }
}

// C[m×n] = A[k×m]ᵀ · B[k×n]
template <class T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a,
             std::span<const T> b, std::span<T> c) {
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p * m + i];
      if (av == 0.0) continue;
      const T* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
    }
    T* crow = c.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = static_cast<T>(acc[j]);
  }
}

}  // namespace serial

namespace parallel {

template <class T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a,
             std::span<const T> b, std::span<T> c);
template <class T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a,
             std::span<const T> b, std::span<T> c);
template <class T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a,
             std::span<const T> b, std::span<T> c);

extern template void gemm_nn<float>(std::size_t, std::size_t, std::size_t,
                                    std::span<const float>, std::span<const float>,
                                    std::span<float>);
extern template void gemm_nn<double>(std::size_t, std::size_t, std::size_t,
                                     std::span<const double>,
                                     std::span<const double>, std::span<double>);
extern template void gemm_nt<float>(std::size_t, std::size_t, std::size_t,
                                    std::span<const float>, std::span<const float>,
                                    std::span<float>);
extern template void gemm_nt<double>(std::size_t, std::size_t, std::size_t,
                                     std::span<const double>,
                                     std::span<const double>, std::span<double>);
extern template void gemm_tn<float>(std::size_t, std::size_t, std::size_t,
                                    std::span<const float>, std::span<const float>,
                                    std::span<float>);
extern template void gemm_tn<double>(std::size_t, std::size_t, std::size_t,
                                     std::span<const double>,
                                     std::span<const double>, std::span<double>);

}  // namespace parallel

}  // namespace ufcmil::kernels
