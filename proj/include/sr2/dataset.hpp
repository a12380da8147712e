#pragma once

// Dataset persistence and split-aware generation for the puzzle tasks.
//
// File layout: one header line
//   # task=<sudoku|maze> size=<n> count=<n> gen_version=<n> seed=<u64>
//     tool=<name-version> config=<hex64> seq_len=<n> vocab_in=<n> vocab_out=<n>
// followed by one record per line: comma-separated input tokens, a tab,
// comma-separated target tokens, a tab, the decimal instance id. Formatting is
// canonical, so equal datasets serialise to identical bytes.

#include <cstdint>
#include <string>
#include <vector>

#include "sr2/engine.hpp"
#include "sr2/errors.hpp"
#include "sr2/version.hpp"

namespace sr2 {

struct DatasetHeader {
  std::string task;  // "sudoku" or "maze"
  int size = 0;      // box for sudoku, bitmap width (== height) for maze
  long count = 0;
  int gen_version = kGeneratorVersion;
  std::uint64_t seed = 0;
  std::string tool = tool_id();
  std::uint64_t config_hash = 0;
  int seq_len = 0;
  int vocab_in = 0;
  int vocab_out = 0;
};

struct Dataset {
  DatasetHeader header;
  std::vector<Example> examples;
};

void write_dataset(const std::string& path, const Dataset& ds);

// Parses and cross-checks the file: header completeness, generator version,
// record count, token lengths, and vocabulary ranges all have to agree with
// the header, otherwise IoError.
Dataset read_dataset(const std::string& path);

// Hash of the serialised header line minus the count field; train/test files
// produced by one run share it, which lets downstream artifacts assert they
// were computed on the same data recipe.
std::uint64_t dataset_recipe_hash(const DatasetHeader& h);

// ---------------------------------------------------------------------------
// Generation. Instance ids are `id_offset + i`, so splits drawn with disjoint
// offset ranges have disjoint id sets; per-instance seeds come from
// derive_seed(seed, id), making every instance reproducible in isolation.
// ---------------------------------------------------------------------------

struct GeneratedSplit {
  Dataset data;
  std::vector<double> difficulty;  // parallel to examples: solver backtracks
                                   // (sudoku) or path length (maze)
};

struct SudokuDataConfig {
  int box = 2;
  int n_clues = 6;
  long count = 1000;
  std::uint64_t seed = 0;
  std::uint64_t id_offset = 0;
  std::uint64_t config_hash = 0;
  int threads = 1;
};
GeneratedSplit generate_sudoku_dataset(const SudokuDataConfig& cfg);

struct MazeDataConfig {
  int width = 9;
  int height = 9;
  long count = 1000;
  double keep_fraction = 0.25;  // hardest fraction kept from the oversampled pool
  std::uint64_t seed = 0;
  std::uint64_t id_offset = 0;
  std::uint64_t config_hash = 0;
  int threads = 1;
};
GeneratedSplit generate_maze_dataset(const MazeDataConfig& cfg);
// Pool size the maze generator draws before hardness filtering; the test
// split's id_offset should sit past the training pool, not just its count.
long maze_pool_size(const MazeDataConfig& cfg);

}  // namespace sr2
