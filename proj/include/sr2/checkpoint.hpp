#pragma once

// Binary checkpoints: model parameters, optimizer state, and the training
// RNG, enough to continue a run bit-exactly. The format is versioned; a
// file with a different major version is refused outright — it is never
// silently reinterpreted. Every checkpoint carries the tool id and the
// resolved-config hash, and loading validates both.
//
// Layout (all integers little-endian):
//   magic "SR2CKPT\n" | u32 major | u32 minor | str tool | u64 config_hash
//   u8 elem_width | i64 epoch | i64 step | i64 opt_t | str rng_state
//   u64 n_params | n_params x (str name | u64 numel | numel raw elements)
//   u8 has_moments | [n_params x (numel raw m1 | numel raw m2)]
// where str = u32 length + that many bytes.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "sr2/engine.hpp"
#include "sr2/errors.hpp"
#include "sr2/rng.hpp"
#include "sr2/version.hpp"

namespace sr2 {

namespace ckpt_detail {

inline constexpr char kMagic[8] = {'S', 'R', '2', 'C', 'K', 'P', 'T', '\n'};

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void put_u8(std::ostream& os, std::uint8_t v) { put_bytes(os, &v, 1); }

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  put_bytes(os, b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  put_bytes(os, b, 8);
}

inline void put_i64(std::ostream& os, std::int64_t v) {
  put_u64(os, static_cast<std::uint64_t>(v));
}

inline void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  put_bytes(os, s.data(), s.size());
}

inline void get_bytes(std::istream& is, void* p, std::size_t n,
                      const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw IoError(std::string("checkpoint: truncated while reading ") + what);
  }
}

inline std::uint8_t get_u8(std::istream& is, const char* what) {
  std::uint8_t v = 0;
  get_bytes(is, &v, 1, what);
  return v;
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  get_bytes(is, b, 4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(std::istream& is, const char* what) {
  unsigned char b[8];
  get_bytes(is, b, 8, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

inline std::int64_t get_i64(std::istream& is, const char* what) {
  return static_cast<std::int64_t>(get_u64(is, what));
}

inline std::string get_str(std::istream& is, const char* what,
                           std::uint32_t max_len = 1u << 20) {
  const std::uint32_t n = get_u32(is, what);
  if (n > max_len) {
    throw IoError(std::string("checkpoint: implausible string length for ") +
                  what);
  }
  std::string s(n, '\0');
  if (n) get_bytes(is, s.data(), n, what);
  return s;
}

}  // namespace ckpt_detail

template <class T>
void save_checkpoint(const std::string& path, Model<T>& model,
                     const TrainState<T>& state, std::uint64_t config_hash) {
  namespace d = ckpt_detail;
  auto named = model.named_params();
  if (!state.opt.m1.empty() && state.opt.m1.size() != named.size()) {
    throw DimensionError(
        "checkpoint: optimizer moments do not match the parameter list");
  }

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot write " + path);
  d::put_bytes(os, d::kMagic, sizeof(d::kMagic));
  d::put_u32(os, kCheckpointMajor);
  d::put_u32(os, kCheckpointMinor);
  d::put_str(os, tool_id());
  d::put_u64(os, config_hash);
  d::put_u8(os, static_cast<std::uint8_t>(sizeof(T)));
  d::put_i64(os, state.epoch);
  d::put_i64(os, state.step);
  d::put_i64(os, state.opt.t);
  d::put_str(os, rng_to_string(state.rng));
  d::put_u64(os, named.size());
  for (auto& [name, t] : named) {
    d::put_str(os, name);
    const std::size_t numel = t->data->size();
    d::put_u64(os, numel);
    d::put_bytes(os, t->data->data(), numel * sizeof(T));
  }
  const bool has_moments = !state.opt.m1.empty();
  d::put_u8(os, has_moments ? 1 : 0);
  if (has_moments) {
    for (std::size_t k = 0; k < named.size(); ++k) {
      const std::size_t numel = named[k].second->data->size();
      if (state.opt.m1[k].size() != numel || state.opt.m2[k].size() != numel) {
        throw DimensionError("checkpoint: moment size mismatch on " +
                             named[k].first);
      }
      d::put_bytes(os, state.opt.m1[k].data(), numel * sizeof(T));
      d::put_bytes(os, state.opt.m2[k].data(), numel * sizeof(T));
    }
  }
  os.flush();
  if (!os) throw IoError("checkpoint: write failed for " + path);
}

template <class T>
void load_checkpoint(const std::string& path, Model<T>& model,
                     TrainState<T>& state, std::uint64_t expected_hash) {
  namespace d = ckpt_detail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + path);

  char magic[8];
  d::get_bytes(is, magic, sizeof(magic), "magic");
  if (std::memcmp(magic, d::kMagic, sizeof(magic)) != 0) {
    throw IoError("checkpoint: " + path + " is not a checkpoint file");
  }
  const std::uint32_t major = d::get_u32(is, "major version");
  const std::uint32_t minor = d::get_u32(is, "minor version");
  (void)minor;  // forward-compatible within a major version
  if (major != kCheckpointMajor) {
    throw IoError("checkpoint: format major version " + std::to_string(major) +
                  " is not supported (this build reads version " +
                  std::to_string(kCheckpointMajor) +
                  "); refusing to reinterpret");
  }
  const std::string tool = d::get_str(is, "tool id");
  if (tool.rfind(std::string(kToolName) + "-", 0) != 0) {
    throw IoError("checkpoint: unrecognised producing tool '" + tool + "'");
  }
  const std::uint64_t stored_hash = d::get_u64(is, "config hash");
  if (stored_hash != expected_hash) {
    char a[17], b[17];
    for (int i = 0; i < 16; ++i) {
      a[15 - i] = "0123456789abcdef"[(stored_hash >> (4 * i)) & 0xf];
      b[15 - i] = "0123456789abcdef"[(expected_hash >> (4 * i)) & 0xf];
    }
    a[16] = b[16] = '\0';
    throw VerificationError(
        std::string("checkpoint: config hash mismatch: file has ") + a +
        ", resolved configuration is " + b);
  }
  const std::uint8_t width = d::get_u8(is, "element width");
  if (width != sizeof(T)) {
    throw IoError("checkpoint: element width " + std::to_string(width) +
                  " does not match this build's " +
                  std::to_string(sizeof(T)));
  }
  const std::int64_t epoch = d::get_i64(is, "epoch");
  const std::int64_t step = d::get_i64(is, "step");
  const std::int64_t opt_t = d::get_i64(is, "optimizer step count");
  const std::string rng_state = d::get_str(is, "rng state");

  auto named = model.named_params();
  const std::uint64_t n_params = d::get_u64(is, "parameter count");
  if (n_params != named.size()) {
    throw IoError("checkpoint: holds " + std::to_string(n_params) +
                  " parameters, model has " + std::to_string(named.size()));
  }
  // Stage everything before touching the model, so a truncated or
  // mismatched file never leaves it half-loaded.
  std::vector<std::vector<T>> values(named.size());
  for (std::size_t k = 0; k < named.size(); ++k) {
    const std::string name = d::get_str(is, "parameter name");
    if (name != named[k].first) {
      throw IoError("checkpoint: parameter " + std::to_string(k) + " is '" +
                    name + "', model expects '" + named[k].first + "'");
    }
    const std::uint64_t numel = d::get_u64(is, "parameter size");
    if (numel != named[k].second->data->size()) {
      throw IoError("checkpoint: parameter '" + name + "' has " +
                    std::to_string(numel) + " elements, model expects " +
                    std::to_string(named[k].second->data->size()));
    }
    values[k].resize(static_cast<std::size_t>(numel));
    d::get_bytes(is, values[k].data(),
                 static_cast<std::size_t>(numel) * sizeof(T),
                 name.c_str());
  }
  const bool has_moments = d::get_u8(is, "moment flag") != 0;
  std::vector<std::vector<T>> m1, m2;
  if (has_moments) {
    m1.resize(named.size());
    m2.resize(named.size());
    for (std::size_t k = 0; k < named.size(); ++k) {
      const std::size_t numel = named[k].second->data->size();
      m1[k].resize(numel);
      m2[k].resize(numel);
      d::get_bytes(is, m1[k].data(), numel * sizeof(T), "first moments");
      d::get_bytes(is, m2[k].data(), numel * sizeof(T), "second moments");
    }
  }

  for (std::size_t k = 0; k < named.size(); ++k) {
    *named[k].second->data = std::move(values[k]);
  }
  state.epoch = static_cast<int>(epoch);
  state.step = step;
  state.opt.t = opt_t;
  state.opt.m1 = std::move(m1);
  state.opt.m2 = std::move(m2);
  state.rng = rng_from_string(rng_state);
}

}  // namespace sr2
