#pragma once

#include <cstddef>
#include <functional>

namespace ivdur {

// 0 means "use the available hardware parallelism".
unsigned resolve_threads(unsigned requested) noexcept;

// Runs body(i) for i in [0, n). Iterations must write only to their own
// slot of any shared output. If iterations throw, the exception of the
// lowest failing index is rethrown after all workers finish.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& body);

}  // namespace ivdur
