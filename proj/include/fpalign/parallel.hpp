#pragma once

#include <cstddef>
#include <functional>

namespace fpalign {

/// Worker cap used by parallel_for. 0 means hardware concurrency.
void set_thread_count(std::size_t n);
std::size_t thread_count();

/// Calls fn(i) for i in [0, n) over up to thread_count() workers. Each index
/// runs exactly once, so results written per index do not depend on the
/// worker count. The first exception thrown by any call is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace fpalign
