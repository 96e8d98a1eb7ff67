#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tailchain {

// Worker cap: min(OpenMP max threads, TAILCHAIN_THREADS if set and positive).
inline int thread_count() {
#ifdef _OPENMP
  int n = omp_get_max_threads();
#else
  int n = 1;
#endif
  if (const char* env = std::getenv("TAILCHAIN_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1 && cap < n) n = static_cast<int>(cap);
  }
  return n;
}

// Parallel loop over [0, n). The body must only write to state owned by its
// own index so results do not depend on the schedule; reductions are done by
// the caller over index-addressed buffers, in index order, to keep every
// result bit-identical across thread counts.
template <typename F>
void parallel_for(std::int64_t n, F&& body) {
  const int threads = thread_count();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads)
#endif
  for (std::int64_t i = 0; i < n; ++i) body(i);
#ifndef _OPENMP
  (void)threads;
#endif
}

// Same, but safe for bodies that may throw (exceptions cannot cross an OpenMP
// region): the first exception is captured and rethrown after the loop.
template <typename F>
void parallel_for_except(std::int64_t n, F&& body) {
  std::atomic<bool> failed{false};
  std::exception_ptr eptr;
  std::mutex mu;
  parallel_for(n, [&](std::int64_t i) {
    if (failed.load(std::memory_order_relaxed)) return;
    try {
      body(i);
    } catch (...) {
      std::lock_guard<std::mutex> g(mu);
      if (!failed.exchange(true)) eptr = std::current_exception();
    }
  });
  if (eptr) std::rethrow_exception(eptr);
}

}  // namespace tailchain
