#pragma once

#include <cstddef>
#include <functional>

namespace vgs {

/// Splits [0, n) into at most `threads` contiguous chunks and runs
/// fn(worker, begin, end) on each, worker 0 on the calling thread.
///
/// The partition depends only on n and the effective thread count, so
/// work-to-worker assignment is deterministic. threads <= 1 runs the whole
/// range inline. If workers throw, the exception from the lowest worker
/// index is rethrown after all workers have joined.
void parallel_for(std::size_t n, int threads,
                  const std::function<void(int, std::size_t, std::size_t)>& fn);

}  // namespace vgs
