#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

#include "wmfg/common.hpp"

namespace wmfg {

// Runs body(i) for i in [begin, end) on up to `workers` threads using static
// contiguous chunks. Bodies must write only to slots owned by their index, so
// results never depend on the worker count. The exception from the lowest
// failing chunk is rethrown.
template <class Body>
void parallel_for(Index begin, Index end, int workers, Body&& body) {
  const Index n = end - begin;
  if (n <= 0) return;
  const Index chunks = std::clamp<Index>(workers, 1, n);
  if (chunks == 1) {
    for (Index i = begin; i < end; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(chunks));
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(chunks));
  for (Index c = 0; c < chunks; ++c) {
    const Index lo = begin + n * c / chunks;
    const Index hi = begin + n * (c + 1) / chunks;
    threads.emplace_back([&, c, lo, hi] {
      try {
        for (Index i = lo; i < hi; ++i) body(i);
      } catch (...) {
        errors[static_cast<std::size_t>(c)] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace wmfg
