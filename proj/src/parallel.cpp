#include "hidegate/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace hidegate {

namespace {
std::atomic<std::size_t> g_threads{0};
// Nested regions run inline on the worker that reached them.
thread_local bool t_in_worker = false;
}

std::size_t default_threads() noexcept {
  std::size_t n = g_threads.load();
  if (n != 0) return n;
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

void set_default_threads(std::size_t n) noexcept { g_threads.store(n); }

void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t)>& fn,
                  std::size_t threads, std::size_t min_chunk) {
  if (n == 0) return;
  if (threads == 0) threads = default_threads();
  min_chunk = std::max<std::size_t>(1, min_chunk);
  threads = std::min(threads, (n + min_chunk - 1) / min_chunk);
  if (threads <= 1 || t_in_worker) {
    fn(0, n);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> workers;
    workers.reserve(threads);
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(n, begin + chunk);
      if (begin >= end) break;
      workers.emplace_back([&, t, begin, end] {
        t_in_worker = true;
        try {
          fn(begin, end);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace hidegate
