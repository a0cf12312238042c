#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace sparsekit {

/// Worker cap for operations that fan out over tensors or checkpoints.
/// Results never depend on the thread count.
struct ExecPolicy {
  unsigned threads = 1;
};

/// Runs fn(i) for i in [0, n) on up to policy.threads workers. Each index is
/// visited exactly once; callers write results into per-index slots. The
/// first exception (lowest index) is rethrown after all workers join.
template <class Fn>
void parallel_for(std::size_t n, ExecPolicy policy, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(std::max(1u, policy.threads), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  std::size_t error_index = n;

  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (i < error_index) {
          error_index = i;
          error = std::current_exception();
        }
      }
    }
  };

  {
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace sparsekit
