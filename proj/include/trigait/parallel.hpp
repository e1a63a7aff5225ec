#pragma once

#include <cstddef>
#include <functional>

namespace trigait {

// Worker count used by the heavy kernels (conv, matmul). 1 = fully serial.
void set_num_threads(int threads);
int num_threads();

// Runs body(begin, end) over disjoint chunks of [0, count). Chunks never share
// output locations, so results do not depend on the thread count.
void parallel_for(std::size_t count, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace trigait
