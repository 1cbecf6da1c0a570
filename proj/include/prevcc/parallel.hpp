#pragma once

#include <cstddef>
#include <functional>

namespace prevcc {

/// Runs body(0..n-1) on up to `workers` threads. Items are claimed from a
/// shared counter, so callers must store results by index. The body must
/// not throw.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& body);

/// Worker count from PREVCC_THREADS, else 1.
int default_workers();

}  // namespace prevcc
