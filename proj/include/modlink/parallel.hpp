#pragma once

#include <cstddef>
#include <functional>

namespace modlink {

/// Runs body(i) for every i in [0, count) on up to `threads` workers
/// (0 = hardware concurrency). Each index is processed exactly once; if any
/// call throws, the exception from the lowest failing index is rethrown after
/// all workers have joined.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body, unsigned threads = 0);

}  // namespace modlink
