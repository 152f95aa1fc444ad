#pragma once

#include <cstddef>
#include <exception>

namespace ufcmil {

/// Runs body(i) for i in [0, n) across OpenMP threads with dynamic
/// scheduling. The first exception thrown by any iteration is rethrown on the
/// calling thread once the loop has finished.
template <class Body>
void parallel_for(std::size_t n, Body&& body) {
  std::exception_ptr error;
  const long count = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < count; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(ufcmil_parallel_for_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace ufcmil
