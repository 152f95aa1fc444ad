#include "ufcmil/kernels.hpp"

#include <omp.h>

namespace ufcmil::kernels {

namespace {

// Below this many multiply-adds the fork/join cost dominates.
constexpr std::size_t kParallelMinWork = 1 << 16;

bool worth_forking(std::size_t m, std::size_t k, std::size_t n) {
  return m > 1 && m * k * n >= kParallelMinWork && !omp_in_parallel() &&
         omp_get_max_threads() > 1;
}

}  // namespace

void set_num_threads(int n) {
  if (n > 0) omp_set_num_threads(n);
}

int max_threads() { return omp_get_max_threads(); }

bool in_parallel_region() { return omp_in_parallel() != 0; }

namespace parallel {

namespace {

// Row i of C from row i of A and a row-major k×n right operand. Same
// summation order as the serial kernels, so results agree bit for bit.
template <class T>
void row_update(const T* arow, std::size_t k, std::size_t n, const T* b, double* acc, T* crow) {
  std::fill(acc, acc + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double av = arow[p];
    const T* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
  }
  for (std::size_t j = 0; j < n; ++j) crow[j] = static_cast<T>(acc[j]);
}

template <class T>
std::vector<T> transposed(const T* x, std::size_t rows, std::size_t cols) {
  std::vector<T> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = x[r * cols + c];
  return t;
}

// C[m×n] = A[m×k] · B[k×n] with both operands row-major.
template <class T>
void gemm_rows(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  const long rows = static_cast<long>(m);
  if (!worth_forking(m, k, n)) {
    std::vector<double> acc(n);
    for (long i = 0; i < rows; ++i) row_update(a + i * k, k, n, b, acc.data(), c + i * n);
    return;
  }
#pragma omp parallel
  {
    std::vector<double> acc(n);
#pragma omp for schedule(static)
    for (long i = 0; i < rows; ++i) row_update(a + i * k, k, n, b, acc.data(), c + i * n);
  }
}

}  // namespace

template <class T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a,
             std::span<const T> b, std::span<T> c) {
  gemm_rows(m, k, n, a.data(), b.data(), c.data());
}

template <class T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a,
             std::span<const T> b, std::span<T> c) {
  const std::vector<T> bt = transposed(b.data(), n, k);
  gemm_rows(m, k, n, a.data(), bt.data(), c.data());
}

template <class T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, std::span<const T> a,
             std::span<const T> b, std::span<T> c) {
  const std::vector<T> at = transposed(a.data(), k, m);
  gemm_rows(m, k, n, at.data(), b.data(), c.data());
}

template void gemm_nn<float>(std::size_t, std::size_t, std::size_t,
                             std::span<const float>, std::span<const float>,
                             std::span<float>);
template void gemm_nn<double>(std::size_t, std::size_t, std::size_t,
                              std::span<const double>, std::span<const double>,
                              std::span<double>);
template void gemm_nt<float>(std::size_t, std::size_t, std::size_t,
                             std::span<const float>, std::span<const float>,
                             std::span<float>);
template void gemm_nt<double>(std::size_t, std::size_t, std::size_t,
                              std::span<const double>, std::span<const double>,
                              std::span<double>);
template void gemm_tn<float>(std::size_t, std::size_t, std::size_t,
                             std::span<const float>, std::span<const float>,
                             std::span<float>);
template void gemm_tn<double>(std::size_t, std::size_t, std::size_t,
                              std::span<const double>, std::span<const double>,
                              std::span<double>);

}  // namespace parallel

}  // namespace ufcmil::kernels
