#pragma once

#include <cstddef>
#include <functional>

namespace hemis {

/// Process-wide default worker count for parallel_for. 0 means "use the
/// hardware concurrency". The CLI sets this from --threads / HEMIS_THREADS.
void set_thread_count(int n);
int thread_count();

/// Runs fn(i) for i in [0, n) on up to `threads` workers (0 = process
/// default) with a static chunk partition. Each index is handled by exactly
/// one worker, so results are bitwise independent of the worker count as
/// long as fn writes only to index-owned storage. Reductions belong to the
/// caller, in fixed index order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, int threads = 0);

}  // namespace hemis
