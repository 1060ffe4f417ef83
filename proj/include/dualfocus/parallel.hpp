#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace dualfocus {

/// Maps `fn` over [0, n) on up to `parallelism` threads; out[i] = fn(i).
template <typename Fn>
auto parallel_map_ordered(std::size_t n, int parallelism, Fn fn) -> std::vector<decltype(fn(std::size_t{}))> {
  std::vector<decltype(fn(std::size_t{}))> out(n);
  const auto workers = static_cast<std::size_t>(std::max(1, parallelism));
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) out[i] = fn(i);
      });
    }
  }
  return out;
}

}  // namespace dualfocus
