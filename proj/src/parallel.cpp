#include "bapm/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace bapm {

namespace {

std::optional<std::size_t>& override_slot() {
  static std::optional<std::size_t> slot;
  return slot;
}

std::size_t from_env() {
  if (const char* env = std::getenv("BAPM_THREADS")) {
    try {
      return static_cast<std::size_t>(std::stoul(env));
    } catch (...) {
    }
  }
  auto hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

}  // namespace

std::size_t worker_count() {
  static const std::size_t env_value = from_env();
  return override_slot().value_or(env_value);
}

bool strict_mode() { return worker_count() == 0; }

void set_worker_count(std::size_t workers) { override_slot() = workers; }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = std::min(n, worker_count());
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) body(i);
  };
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
}

}  // namespace bapm
