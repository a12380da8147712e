#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sr2/errors.hpp"

namespace sr2 {

// All randomness in the project flows through one engine type. Sampling
// helpers below are hand-rolled so that a stream position is fully captured
// by the engine state alone (no hidden distribution caches), which keeps
// checkpoints bit-exact on resume.
using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

// splitmix64 mix; derives independent per-instance streams from a master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t z = master + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Uniform in [0, 1), 53-bit resolution.
inline double rand_unit(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n). Multiply-shift; bias is < n/2^64.
inline std::uint64_t rand_below(Rng& rng, std::uint64_t n) {
  if (n == 0) throw Error("rand_below: n must be positive");
  return static_cast<std::uint64_t>(
      (static_cast<__uint128_t>(rng()) * n) >> 64);
}

inline int rand_int(Rng& rng, int n) {
  return static_cast<int>(rand_below(rng, static_cast<std::uint64_t>(n)));
}

// Standard normal via Box-Muller. Consumes exactly two engine draws per
// sample; nothing is cached between calls.
inline double rand_normal(Rng& rng) {
  double u1 = 0.0;
  do {
    u1 = rand_unit(rng);
  } while (u1 <= 0.0);
  const double u2 = rand_unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Normal truncated to [lo, hi] standard deviations, rejection sampled.
inline double rand_trunc_normal(Rng& rng, double lo = -2.0, double hi = 2.0) {
  for (;;) {
    const double z = rand_normal(rng);
    if (z >= lo && z <= hi) return z;
  }
}

template <class T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = rand_below(rng, i);
    std::swap(v[i - 1], v[j]);
  }
}

inline std::string rng_to_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline Rng rng_from_string(const std::string& s) {
  Rng rng;
  std::istringstream is(s);
  is >> rng;
  if (is.fail()) throw IoError("rng_from_string: malformed engine state");
  return rng;
}

}  // namespace sr2
