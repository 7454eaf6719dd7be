#pragma once

#include <algorithm>
#include <thread>
#include <vector>

namespace gsproto {

/// Resolve a requested worker count; 0 means one per hardware thread.
inline int resolve_threads(int requested) {
  if (requested > 0)
    return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Split [0, n) into contiguous chunks and run fn(worker, begin, end) on each. Worker 0 runs on the
/// calling thread. The chunking depends only on n and the worker count.
template <typename Fn> void parallel_chunks(int n, int workers, Fn &&fn) {
  workers = std::max(1, std::min(workers, n));
  if (workers <= 1) {
    fn(0, 0, n);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(static_cast<std::size_t>(workers - 1));
  const int chunk = (n + workers - 1) / workers;
  for (int w = 1; w < workers; ++w) {
    const int begin = std::min(n, w * chunk);
    const int end = std::min(n, begin + chunk);
    pool.emplace_back([&fn, w, begin, end] { fn(w, begin, end); });
  }
  fn(0, 0, std::min(n, chunk));
}

} // namespace gsproto
