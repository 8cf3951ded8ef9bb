#pragma once

/**
 * Minimal index-space parallelism for embarrassingly parallel trial loops.
 * Callers hand out per-index RNG streams and write to per-index slots, so the
 * result is identical for any worker count.
 */

#include <atomic>
#include <thread>
#include <vector>

namespace spg {

template <class Fn>
void parallel_for(int count, int threads, Fn&& fn) {
  if (threads <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> cursor{0};
  int workers = std::min(threads, count);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&]() {
      for (int i = cursor.fetch_add(1); i < count; i = cursor.fetch_add(1)) fn(i);
    });
  for (auto& worker : pool) worker.join();
}

}  // namespace spg
