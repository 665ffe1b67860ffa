#pragma once

#include <cstddef>
#include <functional>

namespace qmamba {

/// Worker count: QMAMBA_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();

/// Runs body(i) for i in [0, n). Work is split into contiguous chunks; callers that
/// write results into slot i get output independent of the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace qmamba
