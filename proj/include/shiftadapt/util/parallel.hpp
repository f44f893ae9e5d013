#pragma once

#include <cstddef>
#include <functional>

namespace shiftadapt {

/// Worker-pool width used when a call does not pass one. Defaults to the
/// number of hardware threads; the CLI's --jobs flag overrides it.
std::size_t default_jobs();
void set_default_jobs(std::size_t jobs);

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Each index writes its
/// own result slot, so output order never depends on scheduling. The first
/// exception thrown by any job is rethrown after all threads join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, std::size_t jobs = 0);

}  // namespace shiftadapt
