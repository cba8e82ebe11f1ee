#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <span>
#include <thread>
#include <vector>

namespace bdsde {

namespace detail {
inline std::atomic<int>& worker_override() {
  static std::atomic<int> n{0};
  return n;
}
inline int& nesting_depth() {
  thread_local int depth = 0;
  return depth;
}
}  // namespace detail

/// Number of worker threads used by parallel_for.
/// Precedence: set_worker_count() > BDSDE_WORKERS > hardware concurrency.
inline int worker_count() {
  if (int n = detail::worker_override().load(); n > 0) return n;
  if (const char* env = std::getenv("BDSDE_WORKERS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

inline void set_worker_count(int n) { detail::worker_override().store(n > 0 ? n : 0); }

/// Runs fn(i) for i in [0, n) over contiguous chunks. Nested calls run
/// serially on the calling thread. Results must not depend on chunking,
/// so callers write into per-index slots and reduce afterwards.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  if (n == 0) return;
  const int workers = detail::nesting_depth() > 0
                          ? 1
                          : static_cast<int>(std::min<std::size_t>(worker_count(), n));
  if (workers <= 1) {
    ++detail::nesting_depth();
    try {
      for (std::size_t i = 0; i < n; ++i) fn(i);
    } catch (...) {
      --detail::nesting_depth();
      throw;
    }
    --detail::nesting_depth();
    return;
  }

  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    pool.emplace_back([&, w, lo, hi] {
      ++detail::nesting_depth();
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
      --detail::nesting_depth();
    });
  }
  for (auto& t : pool) t.join();
  // lowest chunk wins, so the reported failure does not depend on timing
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Neumaier compensated summation.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// Pairwise sum in a fixed order; the result depends only on the input order.
inline double tree_sum(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  if (xs.size() <= 8) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
  }
  const std::size_t half = xs.size() / 2;
  return tree_sum(xs.first(half)) + tree_sum(xs.subspan(half));
}

inline double tree_mean(std::span<const double> xs) {
  return xs.empty() ? 0.0 : tree_sum(xs) / static_cast<double>(xs.size());
}

}  // namespace bdsde
