#pragma once

#include <functional>

namespace aio2 {

// Worker count from the AIO2_THREADS environment variable; unset, empty, or
// out-of-range values fall back to 1 so runs are serial unless asked.
int configured_threads();

// Runs fn(0..n-1) split into contiguous static chunks. Callers needing
// bit-reproducible sums must reduce per-index results in index order
// afterwards; the chunking itself never reorders work within an index.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace aio2
