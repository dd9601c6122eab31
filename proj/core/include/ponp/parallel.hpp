#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace ponp {

/// Number of worker threads used by parallel_for. Controlled by the
/// PONP_THREADS environment variable; defaults to the hardware count.
inline int worker_count() {
  static int n = [] {
    if (const char* env = std::getenv("PONP_THREADS")) {
      const int v = std::atoi(env);
      if (v >= 1) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
  }();
  return n;
}

namespace detail {
/// True while the current thread is executing inside a parallel_for body;
/// used to avoid nested oversubscription (e.g. threaded gemm inside
/// episode-parallel evaluation).
inline thread_local bool in_parallel_region = false;
}  // namespace detail

inline bool in_parallel_region() { return detail::in_parallel_region; }

/// Runs fn(i) for i in [0, n). Each index writes only its own outputs, so
/// results do not depend on the thread schedule.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
  const int workers = std::min(worker_count(), n);
  if (workers <= 1 || detail::in_parallel_region) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      detail::in_parallel_region = true;
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace ponp
