#pragma once

#include <vector>

#include "sr2/engine.hpp"
#include "sr2/rng.hpp"

namespace sr2::testing {

// Small copy-task instances: target class = input token. Enough structure
// to train on, no dependence on the puzzle generators.
inline std::vector<Example> copy_task(int count, int seq, int vocab,
                                      std::uint64_t seed) {
  std::vector<Example> out;
  Rng rng = make_rng(seed);
  for (int i = 0; i < count; ++i) {
    Example e;
    e.id = static_cast<std::uint64_t>(i);
    e.input.resize(static_cast<std::size_t>(seq));
    for (int& t : e.input) t = rand_int(rng, vocab);
    e.target = e.input;
    out.push_back(std::move(e));
  }
  return out;
}

// Instances with targets unrelated to inputs; for chance-level checks.
inline std::vector<Example> noise_task(int count, int seq, int vocab,
                                       std::uint64_t seed) {
  std::vector<Example> out = copy_task(count, seq, vocab, seed);
  Rng rng = make_rng(seed ^ 0x5eedULL);
  for (Example& e : out) {
    for (int& t : e.target) t = rand_int(rng, vocab);
  }
  return out;
}

}  // namespace sr2::testing
