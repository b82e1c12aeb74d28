#pragma once

// Index-parallel loops. Each index is processed independently and writes
// only its own result slot, so parallel and serial runs produce identical
// output. Exceptions thrown inside the parallel region are captured and the
// first one (by index) is rethrown on the calling thread.

#include <cstddef>
#include <exception>
#include <utility>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace qlink {

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

template <class Fn>
void serial_for_index(std::size_t n, Fn&& fn) {
  for (std::size_t i = 0; i < n; ++i) fn(i);
}

template <class Fn>
void parallel_for_index(std::size_t n, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (long long i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

enum class Execution { Serial, Parallel };

template <class Fn>
void for_index(Execution exec, std::size_t n, Fn&& fn) {
  if (exec == Execution::Parallel) {
    parallel_for_index(n, std::forward<Fn>(fn));
  } else {
    serial_for_index(n, std::forward<Fn>(fn));
  }
}

}  // namespace qlink
