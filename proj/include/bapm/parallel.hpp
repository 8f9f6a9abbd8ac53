#pragma once

#include <cstddef>
#include <functional>

namespace bapm {

/// Worker cap from BAPM_THREADS. 0 selects strict single-threaded mode;
/// unset means hardware concurrency.
std::size_t worker_count();
bool strict_mode();

/// Overrides the environment for the rest of the process (tests, CLI).
void set_worker_count(std::size_t workers);

/// Runs body(i) for i in [0, n). Work items must write disjoint outputs so
/// results do not depend on the number of workers.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace bapm
