#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace sr2 {

// Splits [0, n) into contiguous chunks, one worker thread per chunk.
// Chunk boundaries depend only on (n, threads), and callers combine partial
// results in chunk order, so results do not depend on scheduling.
template <class Fn>
void parallel_for(std::int64_t n, int threads, Fn&& fn) {
  threads = std::max(1, threads);
  if (n <= 0) return;
  const std::int64_t nchunks =
      std::min<std::int64_t>(threads, n);
  if (nchunks == 1) {
    fn(0, std::int64_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(nchunks));
  const std::int64_t base = n / nchunks;
  const std::int64_t extra = n % nchunks;
  std::int64_t begin = 0;
  for (std::int64_t c = 0; c < nchunks; ++c) {
    const std::int64_t len = base + (c < extra ? 1 : 0);
    const std::int64_t end = begin + len;
    pool.emplace_back([&fn, &errors, c, begin, end] {
      try {
        fn(static_cast<int>(c), begin, end);
      } catch (...) {
        errors[static_cast<std::size_t>(c)] = std::current_exception();
      }
    });
    begin = end;
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace sr2
