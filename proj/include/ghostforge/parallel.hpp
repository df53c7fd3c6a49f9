// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace ghostforge {

/// Worker cap read from GHOSTFORGE_THREADS; defaults to 1 so runs are bit-exact
/// without any configuration. Results never depend on the value: every
/// parallel loop writes disjoint outputs with a fixed per-item summation order.
inline std::size_t worker_threads() {
  static const std::size_t cached = [] {
    const char* env = std::getenv("GHOSTFORGE_THREADS");
    if (env == nullptr) return std::size_t{1};
    try {
      long v = std::stol(env);
      return v < 1 ? std::size_t{1} : static_cast<std::size_t>(v);
    } catch (...) {
      return std::size_t{1};
    }
  }();
  return cached;
}

/// Calls fn(i) for i in [0, count), split into contiguous chunks.
template <class Fn>
void parallel_for(std::size_t count, Fn&& fn) {
  const std::size_t workers = std::min(worker_threads(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (count + workers - 1) / workers;
  for (std::size_t t = 0; t < workers; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(count, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([begin, end, &fn] {
      for (std::size_t i = begin; i < end; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace ghostforge
