#include "sosuq/parallel.hpp"

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace sosuq {

int hardware_threads() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }

  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads) - 1);
  std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));

  auto run_chunk = [&](int tid) {
    int64_t lo = static_cast<int64_t>(n) * tid / threads;
    int64_t hi = static_cast<int64_t>(n) * (tid + 1) / threads;
    try {
      for (int64_t i = lo; i < hi; ++i) fn(static_cast<int>(i));
    } catch (...) {
      errors[static_cast<size_t>(tid)] = std::current_exception();
    }
  };

  for (int t = 1; t < threads; ++t) pool.emplace_back(run_chunk, t);
  run_chunk(0);
  for (auto& th : pool) th.join();

  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

} // namespace sosuq
