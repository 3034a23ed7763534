#pragma once

#include <cstddef>
#include <functional>

namespace invlens {

// Process-wide setup: keeps large gradient buffers on the heap instead of
// remapping them every step. Safe to call more than once.
void configure_runtime();

// Worker cap from INVLENS_THREADS (default 1). Throws DomainError on a
// malformed value.
std::size_t worker_threads();

// Runs body(i) for i in [0, n) on up to `threads` workers. Each index is
// handled exactly once; callers write results into per-index slots so the
// outcome does not depend on scheduling.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body);

}  // namespace invlens
