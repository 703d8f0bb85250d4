#pragma once

#include <cstddef>
#include <functional>

namespace hidegate {

// Worker count used when callers pass 0; defaults to hardware concurrency.
std::size_t default_threads() noexcept;
void set_default_threads(std::size_t n) noexcept;

// Splits [0, n) into contiguous chunks, one per worker. Each chunk is
// handled by exactly one call of fn(begin, end); callers write results into
// pre-sized slots so output is independent of scheduling. Exceptions from
// workers are rethrown (first chunk wins).
void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t)>& fn,
                  std::size_t threads = 0, std::size_t min_chunk = 1);

}  // namespace hidegate
