#pragma once

#include <cstddef>
#include <functional>

namespace advi {

// Worker count from ADVI_WORKERS, else hardware concurrency (at least 1).
std::size_t default_workers();

// Calls fn(i) for i in [0, n) on up to `workers` threads. Each index is
// handled exactly once; results must be written to per-index slots so the
// outcome does not depend on scheduling. The exception from the lowest
// failing index is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t workers,
                  const std::function<void(std::size_t)>& fn);

}  // namespace advi
