#include "shiftadapt/util/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace shiftadapt {
namespace {

std::atomic<std::size_t> g_jobs{0};

}  // namespace

std::size_t default_jobs() {
  const std::size_t j = g_jobs.load();
  if (j > 0) return j;
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

void set_default_jobs(std::size_t jobs) { g_jobs.store(jobs); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, std::size_t jobs) {
  if (jobs == 0) jobs = default_jobs();
  jobs = std::min(jobs, n);
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        next.store(n);
      }
    }
  };
  {
    std::vector<std::jthread> threads;
    threads.reserve(jobs);
    for (std::size_t t = 0; t < jobs; ++t) threads.emplace_back(worker);
  }
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace shiftadapt
