#pragma once

#include <cstddef>
#include <functional>

namespace stratpred {

/// Worker count for data-parallel loops; 1 (the default) runs inline.
void set_thread_count(int n);
int thread_count();

/// Calls fn(i) for i in [0, n), split into contiguous blocks across workers.
/// Callers write results into per-index slots and reduce afterwards in index
/// order, which keeps output independent of the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace stratpred
