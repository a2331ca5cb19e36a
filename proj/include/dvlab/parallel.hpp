#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace dvlab {

/// Runs fn(i) for i in [0, count) on up to `workers` threads.
///
/// Work is split into contiguous index blocks. Callers write results into
/// slot i only, so the output never depends on the worker count. The first
/// exception raised by any task is rethrown on the calling thread.
template <class Fn>
void parallel_for(std::size_t count, unsigned workers, Fn&& fn) {
  workers = std::max(1u, workers);
  if (workers == 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const std::size_t width = std::min<std::size_t>(workers, count);
  std::vector<std::exception_ptr> errors(width);
  std::vector<std::thread> pool;
  pool.reserve(width);
  for (std::size_t w = 0; w < width; ++w) {
    pool.emplace_back([&, w] {
      const std::size_t begin = count * w / width;
      const std::size_t end = count * (w + 1) / width;
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace dvlab
