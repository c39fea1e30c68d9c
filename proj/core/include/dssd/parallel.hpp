#pragma once

#include <cstddef>
#include <functional>

namespace dssd {

/// Worker count used by kernels. 1 (the default) is the reference mode.
void set_num_threads(int threads);
int num_threads();

/// Runs fn(i) for i in [begin, end), split into contiguous chunks, one per
/// worker. Callers only write disjoint outputs per index, so results do not
/// depend on the thread count.
void parallel_for(std::ptrdiff_t begin, std::ptrdiff_t end,
                  const std::function<void(std::ptrdiff_t)>& fn);

}  // namespace dssd
