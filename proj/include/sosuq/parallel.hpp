#pragma once

#include <functional>

namespace sosuq {

/// Runs fn(i) for i in [0, n). Work is split into contiguous chunks with a
/// static schedule; callers must write results to disjoint slots indexed by
/// i, which keeps every parallel reduction in this project independent of
/// the thread count. threads <= 1 runs inline.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

/// Hardware concurrency, at least 1.
int hardware_threads();

} // namespace sosuq
