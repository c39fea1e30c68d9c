#include "dssd/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace dssd {
namespace {
std::atomic<int> g_threads{1};
}

void set_num_threads(int threads) { g_threads = std::max(1, threads); }

int num_threads() { return g_threads; }

void parallel_for(std::ptrdiff_t begin, std::ptrdiff_t end,
                  const std::function<void(std::ptrdiff_t)>& fn) {
  const std::ptrdiff_t count = end - begin;
  const std::ptrdiff_t workers = std::min<std::ptrdiff_t>(g_threads, count);
  if (workers <= 1) {
    for (std::ptrdiff_t i = begin; i < end; ++i) fn(i);
    return;
  }
  const std::ptrdiff_t chunk = (count + workers - 1) / workers;
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (std::ptrdiff_t t = 1; t < workers; ++t) {
    const std::ptrdiff_t lo = begin + t * chunk;
    const std::ptrdiff_t hi = std::min(end, lo + chunk);
    pool.emplace_back([lo, hi, &fn] {
      for (std::ptrdiff_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (std::ptrdiff_t i = begin; i < std::min(end, begin + chunk); ++i) fn(i);
}

}  // namespace dssd
