#pragma once

#include <cstddef>
#include <functional>

namespace densiclip {

// Process-wide worker cap for data-parallel loops (CLI --jobs). 0 means
// hardware concurrency.
void set_max_threads(int n);
int max_threads();

// Runs fn(i) for i in [begin, end). Work is split into contiguous chunks,
// one per worker; every index is written by exactly one thread, so results
// are bit-identical regardless of the thread count.
void parallel_for(size_t begin, size_t end, const std::function<void(size_t)>& fn);

} // namespace densiclip
