#pragma once

// Thread fan-out over disjoint index ranges. Every reduction in the library
// runs sequentially inside one range, so results do not depend on the thread
// count. SDNET_THREADS overrides the default of hardware_concurrency.

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace sdnet {

inline int thread_count() {
  static int cached = [] {
    if (const char* env = std::getenv("SDNET_THREADS")) {
      int v = std::atoi(env);
      if (v >= 1) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
  }();
  return cached;
}

// body(begin, end) over [0, n) split into contiguous chunks.
template <typename F>
void parallel_for(std::size_t n, F&& body) {
  int threads = thread_count();
  if (threads <= 1 || n < 2) {
    body(std::size_t{0}, n);
    return;
  }
  std::size_t chunks = std::min<std::size_t>(threads, n);
  std::size_t step = (n + chunks - 1) / chunks;
  std::vector<std::thread> pool;
  pool.reserve(chunks);
  for (std::size_t t = 0; t < chunks; ++t) {
    std::size_t b = t * step;
    std::size_t e = std::min(n, b + step);
    if (b >= e) break;
    pool.emplace_back([&body, b, e] { body(b, e); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace sdnet
