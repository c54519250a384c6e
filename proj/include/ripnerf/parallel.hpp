#pragma once

#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace ripnerf {

inline int resolve_workers(int workers) {
  if (workers > 0) return workers;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

// Runs fn(block_index) for every block. Block boundaries never depend on the
// worker count, so callers that reduce per-block results in block order get
// identical output for any number of workers.
inline void parallel_for_blocks(int blocks, int workers, const std::function<void(int)>& fn) {
  workers = std::min(resolve_workers(workers), blocks);
  if (workers <= 1) {
    for (int b = 0; b < blocks; ++b) fn(b);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const int b = next.fetch_add(1);
        if (b >= blocks || failed.load()) break;
        try {
          fn(b);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
          break;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failed.load() && error) std::rethrow_exception(error);
}

}  // namespace ripnerf
