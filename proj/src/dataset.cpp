#include "sr2/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sr2/maze.hpp"
#include "sr2/parallel.hpp"
#include "sr2/sudoku.hpp"

namespace sr2 {

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  for (int i = 15; i >= 0; --i) {
    buf[i] = "0123456789abcdef"[v & 0xf];
    v >>= 4;
  }
  buf[16] = '\0';
  return std::string(buf);
}

std::string header_line(const DatasetHeader& h) {
  std::ostringstream os;
  os << "# task=" << h.task << " size=" << h.size << " count=" << h.count
     << " gen_version=" << h.gen_version << " seed=" << h.seed
     << " tool=" << h.tool << " config=" << hex64(h.config_hash)
     << " seq_len=" << h.seq_len << " vocab_in=" << h.vocab_in
     << " vocab_out=" << h.vocab_out;
  return os.str();
}

[[noreturn]] void fail(const std::string& path, std::size_t line_no,
                       const std::string& what) {
  throw IoError(path + ":" + std::to_string(line_no) + ": " + what);
}

std::uint64_t parse_u64(const std::string& path, std::size_t line_no,
                        const std::string& s, int base = 10) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    fail(path, line_no, "bad integer '" + s + "'");
  }
  return v;
}

// Splits "k1=v1 k2=v2 ..." into pairs, refusing duplicates and bare words.
std::vector<std::pair<std::string, std::string>> parse_kv(
    const std::string& path, std::size_t line_no, const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream is(text);
  std::string word;
  while (is >> word) {
    const auto eq = word.find('=');
    if (eq == std::string::npos || eq == 0) {
      fail(path, line_no, "expected key=value, got '" + word + "'");
    }
    const std::string key = word.substr(0, eq);
    for (const auto& [k, v] : out) {
      if (k == key) fail(path, line_no, "duplicate header key '" + key + "'");
    }
    out.emplace_back(key, word.substr(eq + 1));
  }
  return out;
}

void append_tokens(std::string& line, const std::vector<int>& tokens) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) line.push_back(',');
    line += std::to_string(tokens[i]);
  }
}

std::vector<int> parse_tokens(const std::string& path, std::size_t line_no,
                              const std::string& field, int expect_len,
                              int vocab) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(expect_len));
  const char* p = field.data();
  const char* end = p + field.size();
  while (p < end) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(p, end, v);
    if (ec != std::errc() || (ptr < end && *ptr != ',')) {
      fail(path, line_no, "bad token list");
    }
    if (v < 0 || v >= vocab) {
      fail(path, line_no, "token " + std::to_string(v) +
                              " outside vocabulary of " + std::to_string(vocab));
    }
    out.push_back(v);
    p = ptr < end ? ptr + 1 : ptr;
  }
  if (static_cast<int>(out.size()) != expect_len) {
    fail(path, line_no, "expected " + std::to_string(expect_len) +
                            " tokens, got " + std::to_string(out.size()));
  }
  return out;
}

}  // namespace

void write_dataset(const std::string& path, const Dataset& ds) {
  if (ds.header.count != static_cast<long>(ds.examples.size())) {
    throw UsageError("write_dataset: header count " +
                     std::to_string(ds.header.count) + " != " +
                     std::to_string(ds.examples.size()) + " examples");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_dataset: cannot open " + path);
  out << header_line(ds.header) << '\n';
  std::string line;
  for (const Example& ex : ds.examples) {
    line.clear();
    append_tokens(line, ex.input);
    line.push_back('\t');
    append_tokens(line, ex.target);
    line.push_back('\t');
    line += std::to_string(ex.id);
    out << line << '\n';
  }
  out.flush();
  if (!out) throw IoError("write_dataset: write failed for " + path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_dataset: cannot open " + path);

  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) {
    fail(path, 1, "missing '# key=value ...' header line");
  }
  DatasetHeader h;
  bool seen[10] = {};
  for (const auto& [key, value] : parse_kv(path, 1, line.substr(2))) {
    if (key == "task") {
      h.task = value;
      seen[0] = true;
    } else if (key == "size") {
      h.size = static_cast<int>(parse_u64(path, 1, value));
      seen[1] = true;
    } else if (key == "count") {
      h.count = static_cast<long>(parse_u64(path, 1, value));
      seen[2] = true;
    } else if (key == "gen_version") {
      h.gen_version = static_cast<int>(parse_u64(path, 1, value));
      seen[3] = true;
    } else if (key == "seed") {
      h.seed = parse_u64(path, 1, value);
      seen[4] = true;
    } else if (key == "tool") {
      h.tool = value;
      seen[5] = true;
    } else if (key == "config") {
      h.config_hash = parse_u64(path, 1, value, 16);
      seen[6] = true;
    } else if (key == "seq_len") {
      h.seq_len = static_cast<int>(parse_u64(path, 1, value));
      seen[7] = true;
    } else if (key == "vocab_in") {
      h.vocab_in = static_cast<int>(parse_u64(path, 1, value));
      seen[8] = true;
    } else if (key == "vocab_out") {
      h.vocab_out = static_cast<int>(parse_u64(path, 1, value));
      seen[9] = true;
    } else {
      fail(path, 1, "unknown header key '" + key + "'");
    }
  }
  static const char* kKeys[10] = {"task",   "size", "count",   "gen_version",
                                  "seed",   "tool", "config",  "seq_len",
                                  "vocab_in", "vocab_out"};
  for (int i = 0; i < 10; ++i) {
    if (!seen[i]) fail(path, 1, std::string("missing header key '") + kKeys[i] + "'");
  }
  if (h.task != "sudoku" && h.task != "maze") {
    fail(path, 1, "unknown task '" + h.task + "'");
  }
  if (h.tool.rfind(std::string(kToolName) + "-", 0) != 0) {
    fail(path, 1, "file written by '" + h.tool + "', not a " +
                      std::string(kToolName) + " tool");
  }
  if (h.gen_version != kGeneratorVersion) {
    fail(path, 1, "generator version " + std::to_string(h.gen_version) +
                      " unsupported (this build reads version " +
                      std::to_string(kGeneratorVersion) + ")");
  }
  if (h.seq_len <= 0 || h.vocab_in <= 0 || h.vocab_out <= 0 || h.count < 0) {
    fail(path, 1, "non-positive geometry in header");
  }

  Dataset ds;
  ds.header = h;
  ds.examples.reserve(static_cast<std::size_t>(h.count));
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      fail(path, line_no, "blank record line");
    }
    const auto tab1 = line.find('\t');
    const auto tab2 = tab1 == std::string::npos ? tab1 : line.find('\t', tab1 + 1);
    if (tab2 == std::string::npos ||
        line.find('\t', tab2 + 1) != std::string::npos) {
      fail(path, line_no, "record needs exactly 3 tab-separated fields");
    }
    Example ex;
    ex.input = parse_tokens(path, line_no, line.substr(0, tab1), h.seq_len,
                            h.vocab_in);
    ex.target = parse_tokens(path, line_no, line.substr(tab1 + 1, tab2 - tab1 - 1),
                             h.seq_len, h.vocab_out);
    ex.id = parse_u64(path, line_no, line.substr(tab2 + 1));
    ds.examples.push_back(std::move(ex));
  }
  if (static_cast<long>(ds.examples.size()) != h.count) {
    throw IoError(path + ": header promises " + std::to_string(h.count) +
                  " records, file has " + std::to_string(ds.examples.size()));
  }
  return ds;
}

std::uint64_t dataset_recipe_hash(const DatasetHeader& h) {
  DatasetHeader canon = h;
  canon.count = 0;  // splits of one run differ only in count and content
  return fnv1a64(header_line(canon));
}

GeneratedSplit generate_sudoku_dataset(const SudokuDataConfig& cfg) {
  if (cfg.count < 0) throw UsageError("generate_sudoku_dataset: negative count");
  const int side = cfg.box * cfg.box;
  GeneratedSplit out;
  DatasetHeader& h = out.data.header;
  h.task = "sudoku";
  h.size = cfg.box;
  h.count = cfg.count;
  h.seed = cfg.seed;
  h.config_hash = cfg.config_hash;
  h.seq_len = side * side;
  h.vocab_in = side + 1;
  h.vocab_out = side + 1;

  out.data.examples.resize(static_cast<std::size_t>(cfg.count));
  out.difficulty.resize(static_cast<std::size_t>(cfg.count));
  parallel_for(cfg.count, cfg.threads,
               [&](int, std::int64_t begin, std::int64_t end) {
                 for (std::int64_t i = begin; i < end; ++i) {
                   const std::uint64_t id =
                       cfg.id_offset + static_cast<std::uint64_t>(i);
                   const SudokuPuzzle p = generate_sudoku(
                       cfg.box, cfg.n_clues, derive_seed(cfg.seed, id));
                   auto& ex = out.data.examples[static_cast<std::size_t>(i)];
                   ex.input = encode_sudoku(p.puzzle);
                   ex.target = encode_sudoku(p.solution);
                   ex.id = id;
                   out.difficulty[static_cast<std::size_t>(i)] =
                       static_cast<double>(p.backtracks);
                 }
               });
  return out;
}

long maze_pool_size(const MazeDataConfig& cfg) {
  if (!(cfg.keep_fraction > 0.0 && cfg.keep_fraction <= 1.0)) {
    throw UsageError("maze dataset: keep_fraction must be in (0, 1], got " +
                     std::to_string(cfg.keep_fraction));
  }
  return static_cast<long>(
      std::ceil(static_cast<double>(cfg.count) / cfg.keep_fraction));
}

GeneratedSplit generate_maze_dataset(const MazeDataConfig& cfg) {
  if (cfg.count < 0) throw UsageError("generate_maze_dataset: negative count");
  const long pool_n = maze_pool_size(cfg);

  std::vector<MazeInstance> pool(static_cast<std::size_t>(pool_n));
  parallel_for(pool_n, cfg.threads,
               [&](int, std::int64_t begin, std::int64_t end) {
                 for (std::int64_t i = begin; i < end; ++i) {
                   const std::uint64_t id =
                       cfg.id_offset + static_cast<std::uint64_t>(i);
                   MazeInstance m = generate_maze(cfg.width, cfg.height,
                                                  derive_seed(cfg.seed, id));
                   m.id = id;
                   pool[static_cast<std::size_t>(i)] = std::move(m);
                 }
               });
  std::vector<MazeInstance> kept =
      filter_hardest(std::move(pool), cfg.keep_fraction);
  if (static_cast<long>(kept.size()) < cfg.count) {
    throw GenerationError("generate_maze_dataset: pool of " +
                          std::to_string(pool_n) + " kept only " +
                          std::to_string(kept.size()) + " instances, need " +
                          std::to_string(cfg.count));
  }
  kept.resize(static_cast<std::size_t>(cfg.count));

  GeneratedSplit out;
  DatasetHeader& h = out.data.header;
  h.task = "maze";
  h.size = cfg.width;
  h.count = cfg.count;
  h.seed = cfg.seed;
  h.config_hash = cfg.config_hash;
  h.seq_len = cfg.width * cfg.height;
  h.vocab_in = 4;
  h.vocab_out = 2;

  out.data.examples.reserve(kept.size());
  out.difficulty.reserve(kept.size());
  for (const MazeInstance& m : kept) {
    Example ex;
    ex.input = encode_maze_input(m);
    ex.target = encode_maze_target(m);
    ex.id = m.id;
    out.data.examples.push_back(std::move(ex));
    out.difficulty.push_back(static_cast<double>(m.path_length()));
  }
  return out;
}

}  // namespace sr2
