#pragma once

#include <cstddef>
#include <functional>

namespace bilevel {

// Worker cap: BILEV_THREADS if set and positive, else hardware concurrency.
int worker_count();

// Runs body(i) for i in [0, n) on up to `threads` workers. Exceptions from
// any task are rethrown on the calling thread (first one wins).
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body);

}  // namespace bilevel
