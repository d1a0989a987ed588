#pragma once

#include <cstddef>
#include <functional>

namespace frep {

/// Worker count used when a caller passes 0. Defaults to the hardware count.
void set_default_threads(unsigned n);
unsigned default_threads();

/// Runs fn(i) for i in [0, n) on up to `threads` workers (0 = default).
/// Exceptions are rethrown on the calling thread; the one from the lowest
/// index wins so failures are reported deterministically.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace frep
