#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace wsampler {

/// Fork-join pool for index-parallel loops. Results must be written into
/// index-addressed slots by the body; the pool never decides output order,
/// so anything computed through it is independent of the worker count.
class WorkerPool {
 public:
  explicit WorkerPool(unsigned workers = 1) : workers_(std::max(1u, workers)) {}

  unsigned workers() const noexcept { return workers_; }

  /// Runs body(i) for i in [0, n). If several bodies throw, the exception
  /// of the smallest index is rethrown.
  template <typename Body>
  void parallel_for(std::size_t n, Body&& body) const {
    if (n == 0) return;
    const unsigned threads = static_cast<unsigned>(std::min<std::size_t>(workers_, n));
    if (threads == 1) {
      for (std::size_t i = 0; i < n; ++i) body(i);
      return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex err_mutex;
    std::size_t err_index = n;
    std::exception_ptr err;
    auto run = [&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
        if (i >= n) return;
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (i < err_index) {
            err_index = i;
            err = std::current_exception();
          }
        }
      }
    };
    std::vector<std::thread> pool;
    pool.reserve(threads - 1);
    for (unsigned t = 1; t < threads; ++t) pool.emplace_back(run);
    run();
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
  }

 private:
  unsigned workers_;
};

}  // namespace wsampler
