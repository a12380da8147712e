#pragma once

// Sudoku generation, validation, augmentation, and token encoding. Grids are
// parameterised by the box size b: the playing field is b^2 x b^2 and every
// row, column, and b x b box must contain each digit 1..b^2 at most once
// (exactly once when the grid is complete). Cell value 0 means blank.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sr2/errors.hpp"
#include "sr2/rng.hpp"

namespace sr2 {

struct SudokuGrid {
  int box = 2;             // b: side length of a sub-grid
  std::vector<int> cells;  // row-major, side*side entries in 0..side

  int side() const { return box * box; }
  int n_cells() const { return side() * side(); }

  int at(int r, int c) const {
    return cells[static_cast<std::size_t>(r) * static_cast<std::size_t>(side()) +
                 static_cast<std::size_t>(c)];
  }
  int& at_mut(int r, int c) {
    return cells[static_cast<std::size_t>(r) * static_cast<std::size_t>(side()) +
                 static_cast<std::size_t>(c)];
  }

  static SudokuGrid empty(int box);

  bool operator==(const SudokuGrid& o) const {
    return box == o.box && cells == o.cells;
  }
};

// True iff no row, column, or box repeats a non-zero digit. Blanks are
// ignored. Throws UsageError if any cell is outside 0..side.
bool validate_sudoku(const SudokuGrid& g);

// Valid and free of blanks.
bool sudoku_complete(const SudokuGrid& g);

// Counts completions of `g` by backtracking, stopping once `limit` solutions
// are found (limit = 0 counts exhaustively). Also reports how many times the
// search retracted a placement; that count doubles as a difficulty proxy.
struct SudokuSearchReport {
  long solutions = 0;
  long backtracks = 0;
};
SudokuSearchReport count_sudoku_solutions(const SudokuGrid& g, long limit);

// First solution in the deterministic search order, if any.
std::optional<SudokuGrid> solve_sudoku(const SudokuGrid& g);

struct SudokuPuzzle {
  SudokuGrid puzzle;
  SudokuGrid solution;
  long backtracks = 0;  // solver work on `puzzle`, a difficulty proxy
};

// Builds a complete random solution, then blanks cells in random order while
// the puzzle keeps a unique completion, until exactly `n_clues` clues remain.
// Uniqueness is re-checked after every removal: exhaustive counting for
// b <= 2, count-limited (2) for larger boxes. If a carving pass cannot reach
// `n_clues`, the whole attempt restarts from a derived seed; after a bounded
// number of attempts GenerationError is thrown.
SudokuPuzzle generate_sudoku(int box, int n_clues, std::uint64_t seed);

// The symmetry subgroup used for data augmentation: a digit relabelling, a
// permutation of row bands, and a permutation of column stacks. Applying any
// element to a valid grid yields a valid grid, and the number of completions
// of a puzzle is preserved, so augmented training instances stay unique.
struct SudokuAugmentation {
  std::vector<int> digit_perm;  // size side: digit d -> digit_perm[d-1]
  std::vector<int> band_perm;   // size box: output band i reads input band band_perm[i]
  std::vector<int> stack_perm;  // size box: output stack j reads input stack stack_perm[j]

  static SudokuAugmentation identity(int box);
  static SudokuAugmentation random(int box, Rng& rng);
};

SudokuGrid apply_augmentation(const SudokuGrid& g, const SudokuAugmentation& a);

// apply(g, compose(second, first)) == apply(apply(g, first), second); the
// subgroup is closed under composition, so augmenting twice never leaves the
// reachable set.
SudokuAugmentation compose(const SudokuAugmentation& second,
                           const SudokuAugmentation& first);

// Applies one random augmentation to puzzle and solution coherently.
SudokuPuzzle augment_sudoku(const SudokuPuzzle& p, std::uint64_t seed);
void augment_sudoku_tokens(std::vector<int>& input, std::vector<int>& target,
                           int box, Rng& rng);

// Token codec: row-major flattening, vocabulary {0 (blank), 1..side}.
std::vector<int> encode_sudoku(const SudokuGrid& g);
SudokuGrid decode_sudoku_tokens(const std::vector<int>& tokens, int box);
// Per-cell argmax over `logits`, laid out [cell][vocab] with vocab = side+1.
SudokuGrid decode_sudoku(const std::vector<float>& logits, int box);

// One-instance-per-line import for published corpora: a string of side*side
// digit characters, row-major, '0' or '.' for blank (81 chars for 9x9,
// 16 for 4x4). Throws IoError on malformed input and VerificationError if the
// puzzle does not have exactly one completion.
SudokuGrid parse_sudoku_line(const std::string& line);
SudokuPuzzle import_sudoku_line(const std::string& line);
std::string format_sudoku_line(const SudokuGrid& g);

}  // namespace sr2
