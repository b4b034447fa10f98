#pragma once

#include <cstdlib>
#include <thread>
#include <vector>

namespace hypokernel {

// Worker count from HYPOKERNEL_WORKERS, defaulting to the hardware count.
inline int worker_count() {
  if (const char* env = std::getenv("HYPOKERNEL_WORKERS")) {
    int v = std::atoi(env);
    if (v >= 1) return v;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

// Runs fn(i) for i in [0, n).  fn must write only index-i output slots, so
// results are bitwise independent of the worker count.
template <class F>
void parallel_for(std::size_t n, F&& fn) {
  int w = worker_count();
  if (w <= 1 || n < 128) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::size_t chunks = static_cast<std::size_t>(w);
  std::vector<std::thread> pool;
  pool.reserve(chunks);
  for (std::size_t c = 0; c < chunks; ++c) {
    std::size_t lo = n * c / chunks;
    std::size_t hi = n * (c + 1) / chunks;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace hypokernel
