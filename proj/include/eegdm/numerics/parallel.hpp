#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace eegdm {

namespace detail {
inline std::size_t& thread_cap() {
  static std::size_t cap = 1;
  return cap;
}
}  // namespace detail

// Upper bound on worker threads used by parallel_for (1 = run inline).
inline void set_num_threads(std::size_t n) { detail::thread_cap() = std::max<std::size_t>(1, n); }
inline std::size_t num_threads() { return detail::thread_cap(); }

// Runs fn(i) for i in [0, n) over contiguous chunks. Callers only write to
// disjoint outputs per index.
template <class F>
void parallel_for(std::size_t n, F&& fn) {
  const std::size_t workers = std::min(num_threads(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w * chunk; i < std::min(n, (w + 1) * chunk); ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace eegdm
