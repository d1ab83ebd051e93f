#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace thmm {

/// Worker count from THMM_THREADS, else `fallback`. Always at least 1.
inline int thread_count(int fallback = 1) {
  if (const char* env = std::getenv("THMM_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
  }
  return std::max(1, fallback);
}

/// Seed from THMM_SEED when set.
inline std::optional<std::uint64_t> env_seed() {
  if (const char* env = std::getenv("THMM_SEED")) {
    try {
      return static_cast<std::uint64_t>(std::stoull(env));
    } catch (const std::exception&) {
    }
  }
  return std::nullopt;
}

/// Generator for stream `index` of a run seeded with `seed`. Independent of
/// the order in which streams are consumed.
inline std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x7468u};
  return std::mt19937_64(seq);
}

inline std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t index) { return derived_rng(seed, index)(); }

/// Runs body(i) for i in [0, n) on `threads` workers. The first exception is
/// rethrown after all workers finish.
template <class Body>
void parallel_for(int n, int threads, Body&& body) {
  threads = std::max(1, std::min(threads, n));
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace thmm
