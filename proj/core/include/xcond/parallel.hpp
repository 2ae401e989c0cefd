#pragma once

#include <cstddef>
#include <functional>

namespace xcond {

/// Worker count: XCOND_THREADS when set to a positive integer, else hardware concurrency.
std::size_t default_thread_count();

/// Runs body(i) for i in [0, n) on up to `threads` workers. Each index runs exactly once;
/// callers keep results per index and reduce them in index order.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body);

}  // namespace xcond
