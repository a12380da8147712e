#include "sr2/sudoku.hpp"

#include <algorithm>
#include <bit>
#include <numeric>
#include <sstream>

namespace sr2 {

namespace {

constexpr int kMaxBox = 5;  // side 25 fits the uint32_t digit masks with room

void check_box(int box) {
  if (box < 1 || box > kMaxBox) {
    throw UsageError("sudoku: box size must be in 1..5, got " +
                     std::to_string(box));
  }
}

int box_index(int r, int c, int b) { return (r / b) * b + c / b; }

// Shared backtracking engine for counting, solving, and randomised filling.
// Digit availability is tracked with one bitmask per row/column/box; the next
// cell to branch on is the blank with the fewest candidates (first such cell
// in row-major order), which keeps the search deterministic and fast even at
// box 3. When `shuffle_rng` is set the candidate digits of each branch are
// tried in a random order, turning the solver into a uniform-ish sampler of
// complete grids.
struct Search {
  int b, side, n;
  std::vector<int> cells;
  std::vector<std::uint32_t> row, col, box;
  std::uint32_t full;
  long limit = 0;  // stop after this many solutions (0 = exhaustive)
  long solutions = 0;
  long backtracks = 0;
  std::vector<int> first;
  Rng* shuffle_rng = nullptr;
  bool contradiction = false;

  explicit Search(const SudokuGrid& g)
      : b(g.box),
        side(g.side()),
        n(g.n_cells()),
        cells(g.cells),
        row(static_cast<std::size_t>(side), 0),
        col(static_cast<std::size_t>(side), 0),
        box(static_cast<std::size_t>(side), 0),
        full((side >= 32 ? ~0u : (1u << side) - 1u)) {
    for (int r = 0; r < side; ++r) {
      for (int c = 0; c < side; ++c) {
        const int v = cells[static_cast<std::size_t>(r * side + c)];
        if (v == 0) continue;
        const std::uint32_t bit = 1u << (v - 1);
        const int bi = box_index(r, c, b);
        if ((row[static_cast<std::size_t>(r)] & bit) ||
            (col[static_cast<std::size_t>(c)] & bit) ||
            (box[static_cast<std::size_t>(bi)] & bit)) {
          contradiction = true;  // clue conflict: zero completions
          return;
        }
        row[static_cast<std::size_t>(r)] |= bit;
        col[static_cast<std::size_t>(c)] |= bit;
        box[static_cast<std::size_t>(bi)] |= bit;
      }
    }
  }

  std::uint32_t candidates(int r, int c) const {
    return full & ~(row[static_cast<std::size_t>(r)] |
                    col[static_cast<std::size_t>(c)] |
                    box[static_cast<std::size_t>(box_index(r, c, b))]);
  }

  // Returns true when the solution budget is exhausted and the search should
  // unwind.
  bool run() {
    int best = -1;
    int best_count = side + 1;
    for (int i = 0; i < n; ++i) {
      if (cells[static_cast<std::size_t>(i)] != 0) continue;
      const int cnt =
          std::popcount(candidates(i / side, i % side));
      if (cnt < best_count) {
        best = i;
        best_count = cnt;
        if (cnt == 0) return false;  // dead end
        if (cnt == 1) break;
      }
    }
    if (best < 0) {
      ++solutions;
      if (first.empty()) first = cells;
      return limit > 0 && solutions >= limit;
    }

    const int r = best / side;
    const int c = best % side;
    std::uint32_t cand = candidates(r, c);
    int order[32];
    int n_cand = 0;
    while (cand) {
      const int d = std::countr_zero(cand);
      cand &= cand - 1;
      order[n_cand++] = d;
    }
    if (shuffle_rng) {
      for (int i = n_cand - 1; i > 0; --i) {
        const int j = rand_int(*shuffle_rng, i + 1);
        std::swap(order[i], order[j]);
      }
    }

    const int bi = box_index(r, c, b);
    for (int k = 0; k < n_cand; ++k) {
      const std::uint32_t bit = 1u << order[k];
      cells[static_cast<std::size_t>(best)] = order[k] + 1;
      row[static_cast<std::size_t>(r)] |= bit;
      col[static_cast<std::size_t>(c)] |= bit;
      box[static_cast<std::size_t>(bi)] |= bit;
      const bool stop = run();
      row[static_cast<std::size_t>(r)] &= ~bit;
      col[static_cast<std::size_t>(c)] &= ~bit;
      box[static_cast<std::size_t>(bi)] &= ~bit;
      cells[static_cast<std::size_t>(best)] = 0;
      ++backtracks;
      if (stop) return true;
    }
    return false;
  }
};

void check_cells(const SudokuGrid& g) {
  check_box(g.box);
  const int side = g.side();
  if (static_cast<int>(g.cells.size()) != g.n_cells()) {
    throw DimensionError("sudoku: grid with box " + std::to_string(g.box) +
                         " needs " + std::to_string(g.n_cells()) +
                         " cells, got " + std::to_string(g.cells.size()));
  }
  for (int v : g.cells) {
    if (v < 0 || v > side) {
      throw UsageError("sudoku: cell value " + std::to_string(v) +
                       " outside 0.." + std::to_string(side));
    }
  }
}

}  // namespace

SudokuGrid SudokuGrid::empty(int box) {
  check_box(box);
  SudokuGrid g;
  g.box = box;
  g.cells.assign(static_cast<std::size_t>(box) * box * box * box, 0);
  return g;
}

bool validate_sudoku(const SudokuGrid& g) {
  check_cells(g);
  const int side = g.side();
  std::vector<std::uint32_t> row(static_cast<std::size_t>(side), 0);
  std::vector<std::uint32_t> col(static_cast<std::size_t>(side), 0);
  std::vector<std::uint32_t> box(static_cast<std::size_t>(side), 0);
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      const int v = g.at(r, c);
      if (v == 0) continue;
      const std::uint32_t bit = 1u << (v - 1);
      const int bi = box_index(r, c, g.box);
      if ((row[static_cast<std::size_t>(r)] & bit) ||
          (col[static_cast<std::size_t>(c)] & bit) ||
          (box[static_cast<std::size_t>(bi)] & bit)) {
        return false;
      }
      row[static_cast<std::size_t>(r)] |= bit;
      col[static_cast<std::size_t>(c)] |= bit;
      box[static_cast<std::size_t>(bi)] |= bit;
    }
  }
  return true;
}

bool sudoku_complete(const SudokuGrid& g) {
  if (!validate_sudoku(g)) return false;
  return std::none_of(g.cells.begin(), g.cells.end(),
                      [](int v) { return v == 0; });
}

SudokuSearchReport count_sudoku_solutions(const SudokuGrid& g, long limit) {
  check_cells(g);
  Search s(g);
  SudokuSearchReport rep;
  if (s.contradiction) return rep;
  s.limit = limit;
  s.run();
  rep.solutions = s.solutions;
  rep.backtracks = s.backtracks;
  return rep;
}

std::optional<SudokuGrid> solve_sudoku(const SudokuGrid& g) {
  check_cells(g);
  Search s(g);
  if (s.contradiction) return std::nullopt;
  s.limit = 1;
  s.run();
  if (s.solutions == 0) return std::nullopt;
  SudokuGrid out;
  out.box = g.box;
  out.cells = s.first;
  return out;
}

SudokuPuzzle generate_sudoku(int box, int n_clues, std::uint64_t seed) {
  check_box(box);
  const int side = box * box;
  const int n = side * side;
  if (n_clues < 0 || n_clues > n) {
    throw UsageError("generate_sudoku: clue count " + std::to_string(n_clues) +
                     " outside 0.." + std::to_string(n));
  }

  // Exhaustive uniqueness counting is cheap at box <= 2; larger boxes use a
  // count limit of 2, which distinguishes unique from non-unique just as well.
  const long limit = box <= 2 ? 0 : 2;
  constexpr int kAttempts = 64;

  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));

    SudokuGrid solution = SudokuGrid::empty(box);
    {
      Search fill(solution);
      fill.limit = 1;
      fill.shuffle_rng = &rng;
      fill.run();
      solution.cells = fill.first;
    }

    SudokuGrid puzzle = solution;
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    shuffle_in_place(order, rng);

    int clues = n;
    for (int idx : order) {
      if (clues == n_clues) break;
      const int saved = puzzle.cells[static_cast<std::size_t>(idx)];
      puzzle.cells[static_cast<std::size_t>(idx)] = 0;
      if (count_sudoku_solutions(puzzle, limit).solutions == 1) {
        --clues;
      } else {
        puzzle.cells[static_cast<std::size_t>(idx)] = saved;
      }
    }
    if (clues == n_clues) {
      SudokuPuzzle out;
      out.puzzle = std::move(puzzle);
      out.solution = std::move(solution);
      out.backtracks = count_sudoku_solutions(out.puzzle, 1).backtracks;
      return out;
    }
  }
  throw GenerationError("generate_sudoku: no unique puzzle with " +
                        std::to_string(n_clues) + " clues at box " +
                        std::to_string(box) + " after " +
                        std::to_string(kAttempts) + " attempts");
}

SudokuAugmentation SudokuAugmentation::identity(int box) {
  check_box(box);
  SudokuAugmentation a;
  a.digit_perm.resize(static_cast<std::size_t>(box) * box);
  std::iota(a.digit_perm.begin(), a.digit_perm.end(), 1);
  a.band_perm.resize(static_cast<std::size_t>(box));
  std::iota(a.band_perm.begin(), a.band_perm.end(), 0);
  a.stack_perm = a.band_perm;
  return a;
}

SudokuAugmentation SudokuAugmentation::random(int box, Rng& rng) {
  SudokuAugmentation a = identity(box);
  shuffle_in_place(a.digit_perm, rng);
  shuffle_in_place(a.band_perm, rng);
  shuffle_in_place(a.stack_perm, rng);
  return a;
}

SudokuGrid apply_augmentation(const SudokuGrid& g, const SudokuAugmentation& a) {
  check_cells(g);
  const int b = g.box;
  const int side = g.side();
  if (static_cast<int>(a.digit_perm.size()) != side ||
      static_cast<int>(a.band_perm.size()) != b ||
      static_cast<int>(a.stack_perm.size()) != b) {
    throw DimensionError("apply_augmentation: permutation sizes do not match box " +
                         std::to_string(b));
  }
  SudokuGrid out = SudokuGrid::empty(b);
  for (int r = 0; r < side; ++r) {
    const int src_r = a.band_perm[static_cast<std::size_t>(r / b)] * b + r % b;
    for (int c = 0; c < side; ++c) {
      const int src_c = a.stack_perm[static_cast<std::size_t>(c / b)] * b + c % b;
      const int v = g.at(src_r, src_c);
      out.at_mut(r, c) =
          v == 0 ? 0 : a.digit_perm[static_cast<std::size_t>(v - 1)];
    }
  }
  return out;
}

SudokuAugmentation compose(const SudokuAugmentation& second,
                           const SudokuAugmentation& first) {
  SudokuAugmentation out;
  out.digit_perm.resize(first.digit_perm.size());
  for (std::size_t d = 0; d < first.digit_perm.size(); ++d) {
    out.digit_perm[d] = second.digit_perm[static_cast<std::size_t>(
        first.digit_perm[d] - 1)];
  }
  // Output band i of the composite reads the band that `second` maps it to in
  // the intermediate grid, which in turn reads `first`'s source band.
  out.band_perm.resize(first.band_perm.size());
  for (std::size_t i = 0; i < first.band_perm.size(); ++i) {
    out.band_perm[i] = first.band_perm[static_cast<std::size_t>(
        second.band_perm[i])];
  }
  out.stack_perm.resize(first.stack_perm.size());
  for (std::size_t i = 0; i < first.stack_perm.size(); ++i) {
    out.stack_perm[i] = first.stack_perm[static_cast<std::size_t>(
        second.stack_perm[i])];
  }
  return out;
}

SudokuPuzzle augment_sudoku(const SudokuPuzzle& p, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  const SudokuAugmentation a = SudokuAugmentation::random(p.puzzle.box, rng);
  SudokuPuzzle out;
  out.puzzle = apply_augmentation(p.puzzle, a);
  out.solution = apply_augmentation(p.solution, a);
  out.backtracks = p.backtracks;
  return out;
}

void augment_sudoku_tokens(std::vector<int>& input, std::vector<int>& target,
                           int box, Rng& rng) {
  const SudokuAugmentation a = SudokuAugmentation::random(box, rng);
  SudokuGrid in = decode_sudoku_tokens(input, box);
  SudokuGrid tg = decode_sudoku_tokens(target, box);
  input = encode_sudoku(apply_augmentation(in, a));
  target = encode_sudoku(apply_augmentation(tg, a));
}

std::vector<int> encode_sudoku(const SudokuGrid& g) {
  check_cells(g);
  return g.cells;
}

SudokuGrid decode_sudoku_tokens(const std::vector<int>& tokens, int box) {
  SudokuGrid g;
  g.box = box;
  g.cells = tokens;
  check_cells(g);
  return g;
}

SudokuGrid decode_sudoku(const std::vector<float>& logits, int box) {
  check_box(box);
  const int side = box * box;
  const int n = side * side;
  const int vocab = side + 1;
  if (static_cast<int>(logits.size()) != n * vocab) {
    throw DimensionError("decode_sudoku: expected " + std::to_string(n * vocab) +
                         " logits, got " + std::to_string(logits.size()));
  }
  SudokuGrid g = SudokuGrid::empty(box);
  for (int i = 0; i < n; ++i) {
    const float* cell = logits.data() + static_cast<std::size_t>(i) * vocab;
    int best = 0;
    for (int v = 1; v < vocab; ++v) {
      if (cell[v] > cell[best]) best = v;
    }
    g.cells[static_cast<std::size_t>(i)] = best;
  }
  return g;
}

SudokuGrid parse_sudoku_line(const std::string& line) {
  int box = 0;
  if (line.size() == 16) {
    box = 2;
  } else if (line.size() == 81) {
    box = 3;
  } else {
    throw IoError("sudoku import: line must be 16 (4x4) or 81 (9x9) "
                  "characters, got " +
                  std::to_string(line.size()));
  }
  const int side = box * box;
  SudokuGrid g = SudokuGrid::empty(box);
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    int v = 0;
    if (ch == '.' || ch == '0') {
      v = 0;
    } else if (ch >= '1' && ch <= '9') {
      v = ch - '0';
    } else {
      throw IoError(std::string("sudoku import: bad character '") + ch +
                    "' at position " + std::to_string(i));
    }
    if (v > side) {
      throw IoError("sudoku import: digit " + std::to_string(v) +
                    " exceeds side " + std::to_string(side));
    }
    g.cells[i] = v;
  }
  return g;
}

SudokuPuzzle import_sudoku_line(const std::string& line) {
  SudokuGrid puzzle = parse_sudoku_line(line);
  if (!validate_sudoku(puzzle)) {
    throw VerificationError("sudoku import: puzzle violates validity constraints");
  }
  const SudokuSearchReport rep = count_sudoku_solutions(puzzle, 2);
  if (rep.solutions != 1) {
    throw VerificationError("sudoku import: puzzle has " +
                            std::string(rep.solutions == 0 ? "no" : "multiple") +
                            " completions; need exactly one");
  }
  SudokuPuzzle out;
  out.solution = *solve_sudoku(puzzle);
  out.puzzle = std::move(puzzle);
  out.backtracks = count_sudoku_solutions(out.puzzle, 1).backtracks;
  return out;
}

std::string format_sudoku_line(const SudokuGrid& g) {
  check_cells(g);
  if (g.side() > 9) {
    throw UsageError("format_sudoku_line: single-character digits require "
                     "box <= 3");
  }
  std::string s;
  s.reserve(g.cells.size());
  for (int v : g.cells) s.push_back(static_cast<char>('0' + v));
  return s;
}

}  // namespace sr2
