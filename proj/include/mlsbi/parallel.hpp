#pragma once

#include <cstddef>
#include <functional>

namespace mlsbi {

/// Worker count: hardware concurrency, capped by the MLSBI_THREADS
/// environment variable when it is set to a positive integer.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n). Each index is visited exactly once; callers
/// write results into per-index slots so output never depends on scheduling.
/// The first exception thrown by any worker is rethrown on the caller.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace mlsbi
