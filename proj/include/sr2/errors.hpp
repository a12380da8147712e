#pragma once

#include <stdexcept>
#include <string>

namespace sr2 {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape/contract violations in tensor ops and model wiring.
struct DimensionError : Error {
  using Error::Error;
};

// Out-of-range token ids, class indices, cell values.
struct IndexError : Error {
  using Error::Error;
};

// NaN/Inf detected, non-PD systems, diverged training.
struct NumericError : Error {
  using Error::Error;
};

// Bad CLI flags, malformed config files, unknown keys.
struct UsageError : Error {
  using Error::Error;
};

// A verification check failed (oracle disagreement, failed report).
struct VerificationError : Error {
  using Error::Error;
};

// File format problems: bad magic, unsupported version, truncated data.
struct IoError : Error {
  using Error::Error;
};

// Puzzle generation could not satisfy its constraints within retry budget.
struct GenerationError : Error {
  using Error::Error;
};

}  // namespace sr2
