#include "sr2/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sr2/baselines.hpp"
#include "sr2/checkpoint.hpp"
#include "sr2/config.hpp"
#include "sr2/csv.hpp"
#include "sr2/dataset.hpp"
#include "sr2/engine.hpp"
#include "sr2/errors.hpp"
#include "sr2/maze.hpp"
#include "sr2/ssm.hpp"
#include "sr2/sudoku.hpp"
#include "sr2/svg.hpp"
#include "sr2/version.hpp"

namespace sr2 {

namespace {

namespace fs = std::filesystem;

// Independent sub-streams of the run seed; every consumer of randomness
// derives its own stream so no two ever share an engine position.
constexpr std::uint64_t kStreamData = 0;
constexpr std::uint64_t kStreamInit = 1;
constexpr std::uint64_t kStreamTrain = 2;
constexpr std::uint64_t kStreamVerify = 3;

// ---------------------------------------------------------------------------
// Flag parsing. `--config PATH` loads first; every other `--key value` (or
// `--key=value`) then overrides in command-line order. `--task` sets the
// top-level task key, `--seed/--threads/--out` are shortcuts for run.* keys;
// dotted keys address the config directly; everything else must be an extra
// the subcommand declares.
// ---------------------------------------------------------------------------

struct ParsedCli {
  RunConfig cfg;
  std::map<std::string, std::string> extras;

  bool has(const std::string& key) const { return extras.count(key) != 0; }
  std::string get(const std::string& key, const std::string& fallback = "") const {
    const auto it = extras.find(key);
    return it == extras.end() ? fallback : it->second;
  }
  std::string require(const std::string& key, const std::string& sub) const {
    const auto it = extras.find(key);
    if (it == extras.end()) {
      throw UsageError(sub + ": missing required flag --" + key);
    }
    return it->second;
  }
};

long long parse_count_flag(const std::string& key, const std::string& v,
                           long long lo) {
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || out < lo) {
    throw UsageError("--" + key + " needs an integer >= " +
                     std::to_string(lo) + ", got '" + v + "'");
  }
  return out;
}

ParsedCli parse_cli(int argc, const char* const* argv, int first,
                    const std::string& sub,
                    const std::set<std::string>& allowed_extras) {
  struct Flag {
    std::string key, value;
  };
  std::vector<Flag> flags;
  for (int i = first; i < argc; ++i) {
    std::string tok = argv[i];
    if (tok.rfind("--", 0) != 0 || tok.size() <= 2) {
      throw UsageError(sub + ": expected a --flag, got '" + tok + "'");
    }
    tok.erase(0, 2);
    const auto eq = tok.find('=');
    if (eq != std::string::npos) {
      flags.push_back({tok.substr(0, eq), tok.substr(eq + 1)});
    } else {
      if (i + 1 >= argc) {
        throw UsageError(sub + ": flag --" + tok + " needs a value");
      }
      flags.push_back({tok, argv[++i]});
    }
  }

  ParsedCli out;
  bool config_seen = false;
  for (const Flag& f : flags) {
    if (f.key == "config") {
      if (config_seen) throw UsageError(sub + ": --config given twice");
      config_seen = true;
      out.cfg = load_config_file(f.value);
    }
  }
  for (const Flag& f : flags) {
    if (f.key == "config") continue;
    if (f.key == "seed") {
      set_config_value(out.cfg, "run.seed", f.value);
    } else if (f.key == "task") {
      set_config_value(out.cfg, "task", f.value);
    } else if (f.key == "threads") {
      set_config_value(out.cfg, "run.threads", f.value);
    } else if (f.key == "out") {
      set_config_value(out.cfg, "run.out_dir", f.value);
    } else if (f.key == "paper-counts" && allowed_extras.count(f.key)) {
      if (f.value != "sudoku" && f.value != "maze") {
        throw UsageError("--paper-counts needs sudoku or maze, got '" +
                         f.value + "'");
      }
      out.cfg.task = f.value;
      out.cfg.train_count = 1000;
      out.cfg.test_count = 1000;
    } else if (allowed_extras.count(f.key)) {
      out.extras[f.key] = f.value;
    } else if (f.key.find('.') != std::string::npos) {
      set_config_value(out.cfg, f.key, f.value);
    } else {
      throw UsageError(sub + ": unknown flag --" + f.key);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shared plumbing.
// ---------------------------------------------------------------------------

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

std::string default_data_path(const RunConfig& cfg, const char* split) {
  return join_path(cfg.out_dir, cfg.task + "-" + split + ".tsv");
}

void ensure_out_dir(const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) {
    throw IoError("cannot create output directory " + cfg.out_dir + ": " +
                  ec.message());
  }
}

std::string display_kind(const BaselineSpec& spec) {
  if (spec.kind == "sr2_mixture") {
    return spec.kind + "(" + std::to_string(spec.mixture_k) + ")";
  }
  return spec.kind;
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

std::uint64_t file_bytes_hash(const std::string& path,
                              std::uint64_t seed = 0xcbf29ce484222325ull) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  return fnv1a64(bytes.data(), bytes.size(), seed);
}

std::vector<int> parse_step_list(const std::string& text) {
  std::vector<int> out;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ',')) {
    int k = 0;
    const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), k);
    if (ec != std::errc() || p != item.data() + item.size() || k < 1) {
      throw UsageError("--test-steps needs positive integers, got '" + text +
                       "'");
    }
    out.push_back(k);
  }
  if (out.empty()) throw UsageError("--test-steps list is empty");
  return out;
}

Dataset load_task_dataset(const std::string& path, const RunConfig& cfg) {
  Dataset ds = read_dataset(path);
  if (ds.header.task != cfg.task) {
    throw VerificationError(path + ": holds task '" + ds.header.task +
                            "', configuration expects '" + cfg.task + "'");
  }
  const ModelConfig mc = to_model_config(cfg);
  if (ds.header.seq_len != mc.seq_len || ds.header.vocab_in != mc.vocab_in ||
      ds.header.vocab_out != mc.vocab_out) {
    throw VerificationError(
        path + ": geometry (seq_len " + std::to_string(ds.header.seq_len) +
        ", vocab " + std::to_string(ds.header.vocab_in) + "/" +
        std::to_string(ds.header.vocab_out) +
        ") does not match the configured task (seq_len " +
        std::to_string(mc.seq_len) + ", vocab " + std::to_string(mc.vocab_in) +
        "/" + std::to_string(mc.vocab_out) + ")");
  }
  return ds;
}

Model<float> build_model(const RunConfig& cfg) {
  Rng rng = make_rng(derive_seed(cfg.seed, kStreamInit));
  return build_baseline<float>(to_baseline_spec(cfg), to_model_config(cfg),
                               rng);
}

TrainOptions make_train_options(const RunConfig& cfg) {
  TrainOptions opts;
  opts.batch_size = cfg.batch_size;
  opts.summed_losses = cfg.summed_losses;
  opts.mask_blank_token =
      cfg.mask_blanks ? mask_token_for_task(cfg.task) : -1;
  if (cfg.task == "sudoku" && cfg.augment) {
    const int box = cfg.box;
    opts.augment = [box](std::vector<int>& in, std::vector<int>& tg, Rng& r) {
      augment_sudoku_tokens(in, tg, box, r);
    };
  }
  return opts;
}

TrainState<float> make_train_state(const RunConfig& cfg) {
  TrainState<float> state;
  state.opt.lr = cfg.lr;
  state.opt.beta1 = cfg.beta1;
  state.opt.beta2 = cfg.beta2;
  state.rng = make_rng(derive_seed(cfg.seed, kStreamTrain));
  return state;
}

// Trains until cfg.epochs; the hook sees the metrics of each epoch run here.
void fit(const RunConfig& cfg, Model<float>& model, TrainState<float>& state,
         const std::vector<Example>& train,
         const std::function<void(const Metrics&)>& per_epoch = nullptr) {
  const TrainOptions opts = make_train_options(cfg);
  while (state.epoch < cfg.epochs) {
    Metrics m = train_epoch(train, model, state, opts);
    if (per_epoch) per_epoch(m);
  }
}

Metrics test_eval(const RunConfig& cfg, Model<float>& model,
                  const std::vector<Example>& test,
                  const SchedulePlan* plan_override = nullptr) {
  EvalOptions eo;
  eo.batch_size = cfg.batch_size;
  eo.threads = cfg.threads;
  eo.plan_override = plan_override;
  return evaluate(test, model, eo);
}

void print_eval(const std::string& tag, const Metrics& m) {
  std::cout << tag << ": pass@1=" << fmt("%.6f", m.pass1)
            << " cell_acc=" << fmt("%.6f", m.cell_acc)
            << " loss=" << fmt("%.6f", m.final_loss())
            << " samples/s=" << fmt("%.1f", m.samples_per_s) << "\n";
}

// ---------------------------------------------------------------------------
// generate-data
// ---------------------------------------------------------------------------

struct SplitSummary {
  long count = 0;
  double min = 0, mean = 0, median = 0, max = 0;
};

SplitSummary summarize(const std::vector<double>& difficulty) {
  SplitSummary s;
  s.count = static_cast<long>(difficulty.size());
  if (difficulty.empty()) return s;
  std::vector<double> d = difficulty;
  std::sort(d.begin(), d.end());
  s.min = d.front();
  s.max = d.back();
  s.median = d[d.size() / 2];
  double sum = 0;
  for (double v : d) sum += v;
  s.mean = sum / static_cast<double>(d.size());
  return s;
}

void sweep_validators(const Dataset& ds, const RunConfig& cfg) {
  for (const Example& e : ds.examples) {
    if (cfg.task == "sudoku") {
      const SudokuGrid solution = decode_sudoku_tokens(e.target, cfg.box);
      if (!sudoku_complete(solution) || !validate_sudoku(solution)) {
        throw VerificationError("instance " + std::to_string(e.id) +
                                ": target is not a valid complete grid");
      }
      SudokuGrid puzzle = decode_sudoku_tokens(e.input, cfg.box);
      for (std::size_t i = 0; i < e.input.size(); ++i) {
        if (e.input[i] != 0 && e.input[i] != e.target[i]) {
          throw VerificationError("instance " + std::to_string(e.id) +
                                  ": clue disagrees with the solution");
        }
      }
      if (count_sudoku_solutions(puzzle, 2).solutions != 1) {
        throw VerificationError("instance " + std::to_string(e.id) +
                                ": puzzle does not have a unique solution");
      }
    } else {
      const MazeInstance m = decode_maze_input(e.input, cfg.maze_width);
      const MazePathCheck check = validate_maze_path(m, e.target);
      if (!check.valid || !check.optimal) {
        throw VerificationError("instance " + std::to_string(e.id) +
                                ": target path is not a valid shortest path");
      }
    }
  }
}

int cmd_generate_data(const ParsedCli& cli) {
  const RunConfig& cfg = cli.cfg;
  validate_config(cfg);
  ensure_out_dir(cfg);
  const std::uint64_t h = config_hash(cfg);
  const std::uint64_t data_seed = derive_seed(cfg.seed, kStreamData);

  GeneratedSplit train, test;
  if (cfg.task == "sudoku") {
    SudokuDataConfig dc;
    dc.box = cfg.box;
    dc.n_clues = cfg.clues;
    dc.count = cfg.train_count;
    dc.seed = data_seed;
    dc.id_offset = 0;
    dc.config_hash = h;
    dc.threads = cfg.threads;
    train = generate_sudoku_dataset(dc);
    dc.count = cfg.test_count;
    dc.id_offset = static_cast<std::uint64_t>(cfg.train_count);
    test = generate_sudoku_dataset(dc);
  } else {
    MazeDataConfig dc;
    dc.width = cfg.maze_width;
    dc.height = cfg.maze_height;
    dc.count = cfg.train_count;
    dc.keep_fraction = cfg.keep_fraction;
    dc.seed = data_seed;
    dc.id_offset = 0;
    dc.config_hash = h;
    dc.threads = cfg.threads;
    train = generate_maze_dataset(dc);
    const long pool = maze_pool_size(dc);
    dc.count = cfg.test_count;
    dc.id_offset = static_cast<std::uint64_t>(pool);
    test = generate_maze_dataset(dc);
  }

  const std::string train_path = default_data_path(cfg, "train");
  const std::string test_path = default_data_path(cfg, "test");
  write_dataset(train_path, train.data);
  write_dataset(test_path, test.data);

  // Re-read what was written and run every instance through its validator.
  const Dataset train_back = load_task_dataset(train_path, cfg);
  const Dataset test_back = load_task_dataset(test_path, cfg);
  sweep_validators(train_back, cfg);
  sweep_validators(test_back, cfg);
  if (dataset_recipe_hash(train_back.header) !=
      dataset_recipe_hash(test_back.header)) {
    throw VerificationError("train and test files disagree on the recipe");
  }

  const char* names[2] = {"train", "test"};
  const GeneratedSplit* splits[2] = {&train, &test};
  const std::string* paths[2] = {&train_path, &test_path};
  for (int i = 0; i < 2; ++i) {
    const SplitSummary s = summarize(splits[i]->difficulty);
    std::cout << names[i] << ": " << *paths[i] << "\n  count=" << s.count
              << " difficulty(min/median/mean/max)=" << fmt("%g", s.min) << "/"
              << fmt("%g", s.median) << "/" << fmt("%.2f", s.mean) << "/"
              << fmt("%g", s.max) << "\n";
  }
  std::cout << "recipe=" << hex_u64(dataset_recipe_hash(train_back.header))
            << " config=" << hex_u64(h) << " seed=" << cfg.seed << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const ParsedCli& cli) {
  const RunConfig& cfg = cli.cfg;
  validate_config(cfg);
  ensure_out_dir(cfg);
  const std::uint64_t h = config_hash(cfg);

  const std::string train_path =
      cli.get("train-data", default_data_path(cfg, "train"));
  const std::string test_path =
      cli.get("test-data", default_data_path(cfg, "test"));
  const Dataset train_ds = load_task_dataset(train_path, cfg);
  const Dataset test_ds = load_task_dataset(test_path, cfg);
  if (dataset_recipe_hash(train_ds.header) !=
      dataset_recipe_hash(test_ds.header)) {
    throw VerificationError(
        "train: " + train_path + " and " + test_path +
        " were not generated by the same recipe; refusing the split");
  }

  Model<float> model = build_model(cfg);
  TrainState<float> state = make_train_state(cfg);
  const std::string resume = cli.get("resume");
  if (!resume.empty()) {
    load_checkpoint(resume, model, state, h);
    std::cout << "resumed " << resume << " at epoch " << state.epoch << "\n";
  }

  const BaselineSpec spec = to_baseline_spec(cfg);
  const std::string kind = display_kind(spec);
  std::cout << kind << ": " << model.param_count() << " parameters, T="
            << spec.sr2.total_steps() << ", epochs " << state.epoch << ".."
            << cfg.epochs << ", seed " << cfg.seed << "\n";

  CsvTable metrics_csv;
  metrics_csv.tool = tool_id();
  metrics_csv.config = h;
  metrics_csv.columns = {"epoch",    "block", "kind",
                         "loss",     "cell_acc", "pass1",
                         "wall_s",   "samples_per_s"};

  const auto save_path = join_path(cfg.out_dir, "model.ckpt");
  fit(cfg, model, state, train_ds.examples, [&](const Metrics& m) {
    for (const auto& [label, loss] : m.loss_per_alignment) {
      metrics_csv.rows.push_back(
          {std::to_string(state.epoch), std::to_string(label), kind,
           format_double(loss), format_double(m.cell_acc),
           format_double(m.pass1), format_double(m.wall_s),
           format_double(m.samples_per_s)});
    }
    std::cout << "epoch " << state.epoch << "/" << cfg.epochs
              << " loss=" << fmt("%.5f", m.final_loss())
              << " cell_acc=" << fmt("%.4f", m.cell_acc)
              << " pass@1=" << fmt("%.4f", m.pass1) << " ("
              << fmt("%.1f", m.wall_s) << "s, "
              << fmt("%.0f", m.samples_per_s) << " samples/s)\n";
    if (cfg.checkpoint_every > 0 && state.epoch < cfg.epochs &&
        state.epoch % cfg.checkpoint_every == 0) {
      const auto p = join_path(cfg.out_dir,
                               "model-e" + std::to_string(state.epoch) + ".ckpt");
      save_checkpoint(p, model, state, h);
      std::cout << "checkpoint " << p << "\n";
    }
  });

  save_checkpoint(save_path, model, state, h);
  write_csv(join_path(cfg.out_dir, "train_metrics.csv"), metrics_csv);
  save_config_file(join_path(cfg.out_dir, "train.cfg"), cfg);
  std::cout << "checkpoint " << save_path << "\n";

  const Metrics m = test_eval(cfg, model, test_ds.examples);
  print_eval("test", m);
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const ParsedCli& cli) {
  const RunConfig& cfg = cli.cfg;
  validate_config(cfg);
  const std::uint64_t h = config_hash(cfg);
  const std::string ckpt_path = cli.require("checkpoint", "eval");
  const std::string data_path = cli.require("dataset", "eval");

  Model<float> model = build_model(cfg);
  TrainState<float> state = make_train_state(cfg);
  load_checkpoint(ckpt_path, model, state, h);
  const Dataset ds = load_task_dataset(data_path, cfg);

  if (!cli.has("test-steps")) {
    const Metrics m = test_eval(cfg, model, ds.examples);
    print_eval("eval", m);
    return 0;
  }

  const BaselineSpec spec = to_baseline_spec(cfg);
  const std::vector<int> ks = parse_step_list(cli.get("test-steps"));
  CsvTable csv;
  csv.tool = tool_id();
  csv.config = h;
  csv.columns = {"k", "loss", "cell_acc", "pass1", "samples_per_s"};
  for (int k : ks) {
    const SchedulePlan plan = eval_plan(spec, k);
    const Metrics m = test_eval(cfg, model, ds.examples, &plan);
    csv.rows.push_back({std::to_string(k), format_double(m.final_loss()),
                        format_double(m.cell_acc), format_double(m.pass1),
                        format_double(m.samples_per_s)});
    print_eval("k=" + std::to_string(k), m);
  }
  ensure_out_dir(cfg);
  const std::string out_path = join_path(cfg.out_dir, "eval_steps.csv");
  write_csv(out_path, csv);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

int cmd_ablate(const ParsedCli& cli) {
  const RunConfig& cfg = cli.cfg;
  validate_config(cfg);
  ensure_out_dir(cfg);
  const std::uint64_t h = config_hash(cfg);

  const std::string train_path =
      cli.get("train-data", default_data_path(cfg, "train"));
  const std::string test_path =
      cli.get("test-data", default_data_path(cfg, "test"));
  const Dataset train_ds = load_task_dataset(train_path, cfg);
  const Dataset test_ds = load_task_dataset(test_path, cfg);
  const std::uint64_t data_hash =
      file_bytes_hash(test_path, file_bytes_hash(train_path));

  CsvTable csv;
  csv.tool = tool_id();
  csv.config = h;
  csv.columns = {"variant", "params", "data", "final_loss", "cell_acc",
                 "pass1"};

  for (const BaselineSpec& spec : ablation_suite(to_baseline_spec(cfg))) {
    RunConfig vcfg = cfg;  // identical data/seed/budget; only the kind varies
    vcfg.kind = display_kind(spec);
    Rng init = make_rng(derive_seed(cfg.seed, kStreamInit));
    Model<float> model =
        build_baseline<float>(spec, to_model_config(cfg), init);
    TrainState<float> state = make_train_state(cfg);
    fit(vcfg, model, state, train_ds.examples);
    const Metrics m = test_eval(vcfg, model, test_ds.examples);
    csv.rows.push_back({display_kind(spec), std::to_string(model.param_count()),
                        hex_u64(data_hash), format_double(m.final_loss()),
                        format_double(m.cell_acc), format_double(m.pass1)});
    print_eval(display_kind(spec), m);
  }

  const std::string out_path = join_path(cfg.out_dir, "ablate.csv");
  write_csv(out_path, csv);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

std::vector<std::pair<int, int>> sweep_pairs(const ParsedCli& cli) {
  const bool has_budget = cli.has("budget");
  const bool has_grid = cli.has("grid");
  if (has_budget == has_grid) {
    throw UsageError("sweep: give exactly one of --budget or --grid");
  }
  std::vector<std::pair<int, int>> pairs;
  if (has_budget) {
    const long long budget = parse_count_flag("budget", cli.get("budget"), 1);
    for (long long m = 1; m <= budget; ++m) {
      if (budget % m == 0) {
        pairs.emplace_back(static_cast<int>(m), static_cast<int>(budget / m));
      }
    }
  } else {
    std::istringstream is(cli.get("grid"));
    std::string item;
    while (std::getline(is, item, ',')) {
      const auto x = item.find('x');
      int m = 0, n = 0;
      bool ok = x != std::string::npos;
      if (ok) {
        const char* b = item.data();
        const auto r1 = std::from_chars(b, b + x, m);
        const auto r2 = std::from_chars(b + x + 1, b + item.size(), n);
        ok = r1.ec == std::errc() && r1.ptr == b + x && r2.ec == std::errc() &&
             r2.ptr == b + item.size() && m >= 1 && n >= 1;
      }
      if (!ok) {
        throw UsageError("sweep: --grid needs MxN pairs like 2x8,4x4, got '" +
                         item + "'");
      }
      pairs.emplace_back(m, n);
    }
    if (pairs.empty()) throw UsageError("sweep: --grid list is empty");
    std::sort(pairs.begin(), pairs.end());
  }
  return pairs;
}

int cmd_sweep(const ParsedCli& cli) {
  const RunConfig& cfg = cli.cfg;
  validate_config(cfg);
  const std::vector<std::pair<int, int>> pairs = sweep_pairs(cli);
  ensure_out_dir(cfg);
  const std::uint64_t h = config_hash(cfg);

  const std::string train_path =
      cli.get("train-data", default_data_path(cfg, "train"));
  const std::string test_path =
      cli.get("test-data", default_data_path(cfg, "test"));
  const Dataset train_ds = load_task_dataset(train_path, cfg);
  const Dataset test_ds = load_task_dataset(test_path, cfg);

  CsvTable csv;
  csv.tool = tool_id();
  csv.config = h;
  csv.columns = {"m", "n", "final_loss", "cell_acc", "pass1"};

  for (const auto& [m, n] : pairs) {
    RunConfig pcfg = cfg;
    pcfg.m = m;
    pcfg.n = n;
    validate_config(pcfg);
    Model<float> model = build_model(pcfg);
    TrainState<float> state = make_train_state(pcfg);
    fit(pcfg, model, state, train_ds.examples);
    const Metrics mm = test_eval(pcfg, model, test_ds.examples);
    csv.rows.push_back({std::to_string(m), std::to_string(n),
                        format_double(mm.final_loss()),
                        format_double(mm.cell_acc), format_double(mm.pass1)});
    print_eval("m=" + std::to_string(m) + " n=" + std::to_string(n), mm);
  }

  const std::string out_path = join_path(cfg.out_dir, "sweep.csv");
  write_csv(out_path, csv);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

double cell_to_double(const CsvTable& t, std::size_t row, std::size_t col) {
  const std::string& cell = t.rows[row][col];
  double v = 0;
  const auto [p, ec] =
      std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || p != cell.data() + cell.size()) {
    throw UsageError("plot: cell '" + cell + "' in column '" +
                     t.columns[col] + "', row " + std::to_string(row + 1) +
                     " is not a number");
  }
  return v;
}

int cmd_plot(const ParsedCli& cli) {
  const RunConfig& cfg = cli.cfg;
  const std::string in_path = cli.require("in", "plot");
  const std::string x_col = cli.require("x", "plot");
  const std::string y_col = cli.require("y", "plot");
  const CsvTable t = read_csv(in_path);
  const std::size_t xi = t.column_index(x_col);
  const std::size_t yi = t.column_index(y_col);

  std::vector<Series> series;
  if (cli.has("series")) {
    const std::size_t si = t.column_index(cli.get("series"));
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const std::string& key = t.rows[r][si];
      auto it = std::find_if(series.begin(), series.end(),
                             [&](const Series& s) { return s.name == key; });
      if (it == series.end()) {
        series.push_back({key, {}});
        it = series.end() - 1;
      }
      it->points.emplace_back(cell_to_double(t, r, xi),
                              cell_to_double(t, r, yi));
    }
  } else {
    Series s;
    s.name = y_col;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      s.points.emplace_back(cell_to_double(t, r, xi),
                            cell_to_double(t, r, yi));
    }
    series.push_back(std::move(s));
  }

  ChartLabels labels;
  labels.title = fs::path(in_path).filename().string();
  labels.x_axis = x_col;
  labels.y_axis = y_col;
  const std::string svg = render_line_chart(series, labels);

  std::string out_path = cli.get("svg");
  if (out_path.empty()) {
    ensure_out_dir(cfg);
    out_path = join_path(cfg.out_dir, "plot.svg");
  }
  write_text_file(out_path, svg);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// ssm-verify
// ---------------------------------------------------------------------------

int cmd_ssm_verify(const ParsedCli& cli) {
  const RunConfig& cfg = cli.cfg;
  const long long n_instances =
      cli.has("instances") ? parse_count_flag("instances", cli.get("instances"), 1)
                           : 20;
  std::cout << "ssm-verify: " << n_instances << " instances, seed "
            << cfg.seed << "\n";

  constexpr double kTolerance = 1e-8;
  double worst = 0.0;
  int failures = 0;
  for (long long i = 0; i < n_instances; ++i) {
    const std::uint64_t s =
        derive_seed(derive_seed(cfg.seed, kStreamVerify), static_cast<std::uint64_t>(i));
    Rng r = make_rng(s);
    const int d = 2 + rand_int(r, 5);       // 2..6
    const int m = 1 + rand_int(r, d - 1);   // 1..d-1 (strictly fewer outputs)
    const int T = 1 + rand_int(r, 30);      // 1..30

    std::string line = "  i=" + std::to_string(i) + " d=" + std::to_string(d) +
                       " m=" + std::to_string(m) + " T=" + std::to_string(T);
    bool ok = true;
    try {
      const SSMParams params = random_ssm_params(d, m, derive_seed(s, 1));
      const auto [zs, xs] = simulate(params, T, derive_seed(s, 2));
      const ObsOnlySystem obs = obs_only_normal_system(params, xs);
      const MapSystem sys = build_map_system(params, xs);
      const std::vector<Eigen::VectorXd> zhat = solve_map(sys);
      const std::vector<Eigen::VectorXd> smoothed = rts_smoother(params, xs);
      double diff = 0.0;
      for (int t = 0; t < T; ++t) {
        diff = std::max(diff, (zhat[static_cast<std::size_t>(t)] -
                               smoothed[static_cast<std::size_t>(t)])
                                  .cwiseAbs()
                                  .maxCoeff());
      }
      worst = std::max(worst, diff);
      const int bound = m * T;
      line += " rank=" + std::to_string(obs.rank.rank) + "/" +
              std::to_string(d * T) + " (bound " + std::to_string(bound) +
              ") map-vs-smoother=" + fmt("%.3e", diff) + " pd=ok";
      if (obs.rank.rank > bound) {
        line += "  RANK EXCEEDS BOUND";
        ok = false;
      }
      if (diff >= kTolerance) {
        line += "  DIFF OVER TOLERANCE";
        ok = false;
      }
    } catch (const Error& e) {
      line += std::string("  FAILED: ") + e.what();
      ok = false;
    }
    std::cout << line << "\n";
    if (!ok) ++failures;
  }

  std::cout << "worst map-vs-smoother difference: " << fmt("%.3e", worst)
            << " (tolerance " << fmt("%.0e", kTolerance) << ")\n";
  if (failures > 0) {
    throw VerificationError("ssm-verify: " + std::to_string(failures) + " of " +
                            std::to_string(n_instances) +
                            " instances failed a check");
  }
  std::cout << "all checks passed\n";
  return 0;
}

// ---------------------------------------------------------------------------
// Dispatch.
// ---------------------------------------------------------------------------

void print_usage(std::ostream& os) {
  os << "usage: sr2 <subcommand> [--config PATH] [--key value ...]\n"
        "\n"
        "subcommands:\n"
        "  generate-data   write train/test dataset files; validates every\n"
        "                  instance (extra: --paper-counts sudoku|maze)\n"
        "  train           train a model; writes model.ckpt, train_metrics.csv,\n"
        "                  train.cfg (extras: --train-data, --test-data, --resume)\n"
        "  eval            evaluate a checkpoint (--checkpoint, --dataset;\n"
        "                  optional --test-steps 16,8,4,2,1 horizon sweep)\n"
        "  ablate          run the 8-variant comparison suite on shared data\n"
        "                  (extras: --train-data, --test-data)\n"
        "  sweep           train over (m,n) pairs: --budget B or --grid 2x8,4x4\n"
        "                  (extras: --train-data, --test-data)\n"
        "  plot            render a CSV to an SVG line chart (--in, --x, --y;\n"
        "                  optional --series, --svg)\n"
        "  ssm-verify      cross-check the MAP solver against the smoother\n"
        "                  (optional --instances N)\n"
        "\n"
        "global flags: --config PATH, --task sudoku|maze, --seed U64,\n"
        "--threads N, --out DIR; any dotted config key (e.g. --model.d_model\n"
        "256) overrides the file.\n"
        "exit codes: 0 ok, 1 usage error, 2 verification failure, 3 runtime.\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  try {
    if (argc < 2) {
      print_usage(std::cerr);
      throw UsageError("missing subcommand");
    }
    const std::string sub = argv[1];
    if (sub == "help" || sub == "--help" || sub == "-h") {
      print_usage(std::cout);
      return 0;
    }
    if (sub == "generate-data") {
      return cmd_generate_data(parse_cli(argc, argv, 2, sub, {"paper-counts"}));
    }
    if (sub == "train") {
      return cmd_train(
          parse_cli(argc, argv, 2, sub, {"train-data", "test-data", "resume"}));
    }
    if (sub == "eval") {
      return cmd_eval(
          parse_cli(argc, argv, 2, sub, {"checkpoint", "dataset", "test-steps"}));
    }
    if (sub == "ablate") {
      return cmd_ablate(parse_cli(argc, argv, 2, sub, {"train-data", "test-data"}));
    }
    if (sub == "sweep") {
      return cmd_sweep(parse_cli(argc, argv, 2, sub,
                                 {"budget", "grid", "train-data", "test-data"}));
    }
    if (sub == "plot") {
      return cmd_plot(
          parse_cli(argc, argv, 2, sub, {"in", "x", "y", "series", "svg"}));
    }
    if (sub == "ssm-verify") {
      return cmd_ssm_verify(parse_cli(argc, argv, 2, sub, {"instances"}));
    }
    print_usage(std::cerr);
    throw UsageError("unknown subcommand '" + sub + "'");
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const VerificationError& e) {
    std::cerr << "verification failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace sr2
