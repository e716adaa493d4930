#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace cbf {

// Chunked parallel loop over [0, n). Each worker receives a half-open index
// range; results must be merged deterministically by the caller.
inline void parallel_chunks(std::size_t n,
                            const std::function<void(std::size_t chunk, std::size_t lo, std::size_t hi)>& body,
                            unsigned workers = 0) {
  if (n == 0) return;
  unsigned hw = workers ? workers : std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  std::size_t chunks = std::min<std::size_t>(hw, n);
  if (chunks <= 1) {
    body(0, 0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(chunks);
  std::size_t per = (n + chunks - 1) / chunks;
  for (std::size_t c = 0; c < chunks; ++c) {
    std::size_t lo = c * per;
    std::size_t hi = std::min(n, lo + per);
    if (lo >= hi) break;
    pool.emplace_back([&body, c, lo, hi] { body(c, lo, hi); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace cbf
