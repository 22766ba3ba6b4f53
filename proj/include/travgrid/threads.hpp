#pragma once

#include <functional>

namespace travgrid {

// Thread cap from TRAVGRID_THREADS; 1 when unset or invalid.
int thread_limit();

// Runs body(begin, end) over [0, n) split into contiguous static chunks.
// Chunks write disjoint outputs, so results do not depend on the thread count.
void parallel_rows(int n, int threads, const std::function<void(int, int)>& body);

}  // namespace travgrid
