#pragma once

#include <cstddef>
#include <functional>

namespace csdpaint {

// Worker count: hardware concurrency, capped by CSD_PAINT_THREADS when set.
int worker_count();

// Runs fn(chunk_begin, chunk_end) over [0, n) in fixed-size chunks. Chunk
// boundaries depend only on n and chunk, never on the worker count, so any
// per-chunk partial results can be merged deterministically.
void parallel_chunks(std::size_t n, std::size_t chunk, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace csdpaint
