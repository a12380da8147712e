#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace sr2 {

inline constexpr std::string_view kToolName = "sr2";
inline constexpr std::string_view kToolVersion = "0.1.0";

// Format version for binary checkpoints. Major bumps are incompatible.
inline constexpr std::uint32_t kCheckpointMajor = 1;
inline constexpr std::uint32_t kCheckpointMinor = 0;

// Dataset file generator version, stamped into dataset headers.
inline constexpr int kGeneratorVersion = 1;

inline std::string tool_id() {
  return std::string(kToolName) + "-" + std::string(kToolVersion);
}

inline std::uint64_t fnv1a64(const void* bytes, std::size_t n,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s) {
  return fnv1a64(s.data(), s.size());
}

}  // namespace sr2
