#pragma once

// Run configuration: one flat struct covering task, data, model, schedule,
// optimizer, and run plumbing. The file format is plain `key = value` lines
// with dotted key names; serialisation is canonical (fixed key order,
// shortest-round-trip numerals), so configs hash stably and round-trip
// losslessly through their own file format.

#include <cstdint>
#include <string>
#include <vector>

#include "sr2/baselines.hpp"
#include "sr2/errors.hpp"
#include "sr2/transformer.hpp"

namespace sr2 {

struct RunConfig {
  // task
  std::string task = "sudoku";  // sudoku | maze

  // data.*
  int box = 2;
  int clues = 6;
  int maze_width = 9;
  int maze_height = 9;
  double keep_fraction = 0.25;
  long train_count = 1000;
  long test_count = 1000;
  bool augment = true;  // sudoku only; mazes are never augmented

  // model.*
  std::string kind = "sr2";  // any baseline kind, e.g. sr2_mixture(4)
  int depth = 8;
  int d_model = 128;
  int n_heads = 4;
  int mlp_mult = 4;
  double init_scale = 1.0;

  // schedule.*
  int m = 4;
  int n = 4;
  std::string reflection = "1";   // comma list of 1-based blocks
  std::string alignment = "all";  // "all" or comma list
  bool detach = true;
  int test_time_blocks = 0;  // 0 = the trained horizon

  // train.*
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  int epochs = 10;
  int batch_size = 64;
  bool summed_losses = false;
  bool mask_blanks = false;  // sudoku: score only blank cells in the loss
  int checkpoint_every = 0;  // epochs between checkpoints; 0 = final only

  // run.*
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out_dir = "out";
};

// The full ordered key catalogue; every key is settable and gettable.
std::vector<std::string> config_keys();
void set_config_value(RunConfig& cfg, const std::string& key,
                      const std::string& value);
std::string get_config_value(const RunConfig& cfg, const std::string& key);

std::string serialize_config(const RunConfig& cfg);
RunConfig parse_config_text(const std::string& text, const std::string& origin);
RunConfig load_config_file(const std::string& path);
void save_config_file(const std::string& path, const RunConfig& cfg);

// FNV-1a of the canonical serialisation, minus the four pure-plumbing keys
// train.epochs, train.checkpoint_every, run.threads, and run.out_dir: the
// resolved-config fingerprint stamped into every artifact and validated on
// checkpoint load. The excluded keys control how long a process runs, when
// it snapshots, how many workers it uses, and where files land — none of
// them changes a computed value (checkpoints carry their own epoch
// counter, and worker results are always combined in a fixed order), and a
// resumed run necessarily differs from its parent in the epoch target.
std::uint64_t config_hash(const RunConfig& cfg);

// Cross-field checks beyond per-key parsing; throws UsageError.
void validate_config(const RunConfig& cfg);

// Views of the flat config as the typed configs the engine consumes.
ModelConfig to_model_config(const RunConfig& cfg);
SR2Config to_sr2_config(const RunConfig& cfg);
BaselineSpec to_baseline_spec(const RunConfig& cfg);

// Input token marking maskable positions when train.mask_blanks is on:
// the blank cell for sudoku; -1 (no such token) for maze.
int mask_token_for_task(const std::string& task);

std::string format_double(double v);  // shortest round-trip decimal
std::string hex_u64(std::uint64_t v);

}  // namespace sr2
