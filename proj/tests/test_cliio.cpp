#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sr2/baselines.hpp"
#include "sr2/checkpoint.hpp"
#include "sr2/cli.hpp"
#include "sr2/config.hpp"
#include "sr2/csv.hpp"
#include "sr2/dataset.hpp"
#include "sr2/engine.hpp"
#include "sr2/errors.hpp"
#include "sr2/rng.hpp"
#include "sr2/svg.hpp"
#include "sr2/version.hpp"

using namespace sr2;

namespace {

namespace fs = std::filesystem;

std::string fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "sr2_cliio" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  REQUIRE(out);
  out << bytes;
}

// Runs the CLI in-process with stdout/stderr captured, so expected failures
// stay quiet and printed reports can be asserted on.
int cli(std::vector<std::string> args, std::string* out = nullptr,
        std::string* err = nullptr) {
  args.insert(args.begin(), "sr2");
  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const std::string& a : args) argv.push_back(a.c_str());
  std::ostringstream cout_ss, cerr_ss;
  std::streambuf* old_out = std::cout.rdbuf(cout_ss.rdbuf());
  std::streambuf* old_err = std::cerr.rdbuf(cerr_ss.rdbuf());
  const int rc =
      run_cli(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  if (out) *out = cout_ss.str();
  if (err) *err = cerr_ss.str();
  return rc;
}

// The metric fields of the line starting with `prefix`, with the trailing
// timing-dependent samples/s stripped.
std::string metric_fields(const std::string& out, const std::string& prefix) {
  std::istringstream is(out);
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind(prefix, 0) == 0) {
      const auto cut = line.find(" samples/s=");
      return cut == std::string::npos ? line.substr(prefix.size())
                                      : line.substr(prefix.size(), cut - prefix.size());
    }
  }
  return "";
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration plumbing.
// ---------------------------------------------------------------------------

TEST_CASE("config serialization round-trips losslessly") {
  RunConfig cfg;
  const std::string text1 = serialize_config(cfg);
  RunConfig back = parse_config_text(text1, "inline");
  CHECK(serialize_config(back) == text1);

  // every key settable, gettable, and stable through its own formatting
  for (const std::string& key : config_keys()) {
    const std::string value = get_config_value(cfg, key);
    set_config_value(back, key, value);
    CHECK(get_config_value(back, key) == value);
  }

  // a config with every value moved off its default
  RunConfig full;
  const std::vector<std::pair<std::string, std::string>> overrides = {
      {"task", "maze"},
      {"data.box", "3"},
      {"data.clues", "30"},
      {"data.maze_width", "11"},
      {"data.maze_height", "7"},
      {"data.keep_fraction", "0.5"},
      {"data.train_count", "12"},
      {"data.test_count", "8"},
      {"data.augment", "false"},
      {"model.kind", "sr2_mixture(4)"},
      {"model.depth", "6"},
      {"model.d_model", "48"},
      {"model.heads", "6"},
      {"model.mlp_mult", "2"},
      {"model.init_scale", "0.5"},
      {"schedule.m", "2"},
      {"schedule.n", "8"},
      {"schedule.reflection", "1,3"},
      {"schedule.alignment", "4,8"},
      {"schedule.detach", "false"},
      {"schedule.test_time_blocks", "2"},
      {"train.lr", "0.001"},
      {"train.beta1", "0.85"},
      {"train.beta2", "0.99"},
      {"train.epochs", "3"},
      {"train.batch_size", "16"},
      {"train.summed_losses", "true"},
      {"train.mask_blanks", "true"},
      {"train.checkpoint_every", "2"},
      {"run.seed", "12345678901234567890"},
      {"run.threads", "4"},
      {"run.out_dir", "elsewhere"},
  };
  CHECK(overrides.size() == config_keys().size());
  for (const auto& [k, v] : overrides) set_config_value(full, k, v);
  for (const auto& [k, v] : overrides) CHECK(get_config_value(full, k) == v);
  const std::string text2 = serialize_config(full);
  CHECK(serialize_config(parse_config_text(text2, "inline")) == text2);
}

TEST_CASE("config files accept comments and reject junk") {
  const std::string dir = fresh_dir("cfgfile");
  const std::string path = dir + "/a.cfg";
  spit(path,
       "# a comment line\n"
       "task = maze   # trailing comment\n"
       "\n"
       "  data.maze_width = 11\n"
       "train.lr = 0.5\n");
  const RunConfig cfg = load_config_file(path);
  CHECK(cfg.task == "maze");
  CHECK(cfg.maze_width == 11);
  CHECK(cfg.lr == 0.5);

  RunConfig rt;
  CHECK_THROWS_AS(set_config_value(rt, "no.such_key", "1"), UsageError);
  CHECK_THROWS_AS(set_config_value(rt, "schedule.m", "four"), UsageError);
  CHECK_THROWS_AS(set_config_value(rt, "data.augment", "maybe"), UsageError);
  CHECK_THROWS_AS(set_config_value(rt, "train.lr", "1e-4x"), UsageError);
  CHECK_THROWS_AS(parse_config_text("schedule.m 4\n", "inline"), UsageError);
  // parse errors carry the origin and line number
  try {
    parse_config_text("task = sudoku\nbogus.key = 1\n", "somewhere.cfg");
    CHECK(false);
  } catch (const UsageError& e) {
    CHECK(std::string(e.what()).find("somewhere.cfg:2") != std::string::npos);
  }
  // save/load round trip through a real file
  RunConfig cfg2;
  cfg2.task = "maze";
  cfg2.lr = 1.0 / 3.0;
  save_config_file(dir + "/b.cfg", cfg2);
  const RunConfig cfg3 = load_config_file(dir + "/b.cfg");
  CHECK(serialize_config(cfg3) == serialize_config(cfg2));
  CHECK(cfg3.lr == cfg2.lr);  // shortest-round-trip decimal is exact
}

TEST_CASE("config hash tracks semantics and ignores plumbing") {
  RunConfig a;
  const std::uint64_t h = config_hash(a);

  RunConfig b = a;
  b.epochs = 99;
  b.checkpoint_every = 7;
  b.threads = 16;
  b.out_dir = "another/place";
  CHECK(config_hash(b) == h);

  for (const std::string& key :
       {std::string("train.lr"), std::string("schedule.m"),
        std::string("run.seed"), std::string("model.kind"),
        std::string("data.clues")}) {
    RunConfig c = a;
    set_config_value(c, key, key == "model.kind" ? "recurrent_depth" : "7");
    CHECK(config_hash(c) != h);
  }

  RunConfig t = a;
  t.task = "maze";
  CHECK(config_hash(t) != h);
}

TEST_CASE("config views derive task geometry") {
  RunConfig cfg;
  cfg.box = 3;
  const ModelConfig sud = to_model_config(cfg);
  CHECK(sud.seq_len == 81);
  CHECK(sud.vocab_in == 10);
  CHECK(sud.vocab_out == 10);

  cfg.task = "maze";
  cfg.maze_width = 11;
  cfg.maze_height = 7;
  const ModelConfig mz = to_model_config(cfg);
  CHECK(mz.seq_len == 77);
  CHECK(mz.vocab_in == 4);
  CHECK(mz.vocab_out == 2);

  RunConfig s;
  s.reflection = "1,3";
  s.alignment = "2,4";
  s.detach = false;
  const SR2Config sc = to_sr2_config(s);
  CHECK(sc.reflection_blocks == std::vector<int>{1, 3});
  CHECK(sc.alignment_set == std::vector<int>{2, 4});
  CHECK_FALSE(sc.detach_between_blocks);
  s.alignment = "all";
  CHECK(to_sr2_config(s).alignment_set.empty());

  RunConfig k;
  k.kind = "sr2_mixture(4)";
  const BaselineSpec spec = to_baseline_spec(k);
  CHECK(spec.kind == "sr2_mixture");
  CHECK(spec.mixture_k == 4);

  CHECK(mask_token_for_task("sudoku") == 0);
  CHECK(mask_token_for_task("maze") == -1);

  RunConfig bad;
  bad.task = "crossword";
  CHECK_THROWS_AS(validate_config(bad), UsageError);
  RunConfig bad2;
  bad2.alignment = "1,2";  // final block 4 unsupervised
  CHECK_THROWS_AS(validate_config(bad2), UsageError);
}

// ---------------------------------------------------------------------------
// Checkpoints.
// ---------------------------------------------------------------------------

namespace {

RunConfig tiny_cfg() {
  RunConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.m = 2;
  cfg.n = 2;
  cfg.batch_size = 8;
  cfg.train_count = 16;
  cfg.test_count = 8;
  cfg.epochs = 2;
  return cfg;
}

std::vector<Example> random_examples(const ModelConfig& mc, int count,
                                     std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::vector<Example> out;
  for (int i = 0; i < count; ++i) {
    Example e;
    e.id = static_cast<std::uint64_t>(i);
    for (int s = 0; s < mc.seq_len; ++s) {
      e.input.push_back(rand_int(rng, mc.vocab_in));
      e.target.push_back(rand_int(rng, mc.vocab_out));
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

TEST_CASE("checkpoint round-trips parameters, moments, and rng") {
  const RunConfig cfg = tiny_cfg();
  const ModelConfig mc = to_model_config(cfg);
  Rng init = make_rng(1);
  Model<float> model = build_baseline<float>(to_baseline_spec(cfg), mc, init);
  TrainState<float> state;
  state.rng = make_rng(99);

  // a real training step so optimizer moments are populated
  const std::vector<Example> data = random_examples(mc, 8, 5);
  TrainOptions opts;
  opts.batch_size = 4;
  train_epoch(data, model, state, opts);
  REQUIRE_FALSE(state.opt.m1.empty());
  REQUIRE(state.opt.t > 0);

  const std::string dir = fresh_dir("ckpt");
  const std::string path = dir + "/a.ckpt";
  save_checkpoint(path, model, state, 777);

  Rng init2 = make_rng(2);  // different init: the load must overwrite it
  Model<float> model2 = build_baseline<float>(to_baseline_spec(cfg), mc, init2);
  TrainState<float> state2;
  load_checkpoint(path, model2, state2, 777);

  auto p1 = model.params(), p2 = model2.params();
  REQUIRE(p1.size() == p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    CHECK(*p1[i]->data == *p2[i]->data);
  }
  CHECK(state2.epoch == state.epoch);
  CHECK(state2.step == state.step);
  CHECK(state2.opt.t == state.opt.t);
  CHECK(state2.opt.m1 == state.opt.m1);
  CHECK(state2.opt.m2 == state.opt.m2);
  CHECK(rng_to_string(state2.rng) == rng_to_string(state.rng));

  // identical forward behaviour on a batch
  const Batch b = make_batch(data, {0, 1, 2, 3}, 0, 4, -1);
  NoGradGuard off;
  const auto out1 = plan_forward(b.tokens, b.batch, model.blocks, model.io,
                                 model.mc, model.plan);
  const auto out2 = plan_forward(b.tokens, b.batch, model2.blocks, model2.io,
                                 model2.mc, model2.plan);
  CHECK(out1.final_z.values() == out2.final_z.values());

  // a fresh state (no moments yet) round-trips to a fresh state
  TrainState<float> fresh;
  save_checkpoint(dir + "/fresh.ckpt", model, fresh, 777);
  TrainState<float> fresh2;
  fresh2.opt.m1.resize(3);  // must be cleared by the load
  load_checkpoint(dir + "/fresh.ckpt", model2, fresh2, 777);
  CHECK(fresh2.opt.m1.empty());
  CHECK(fresh2.opt.t == 0);
}

TEST_CASE("checkpoint refuses foreign, tampered, and mismatched files") {
  const RunConfig cfg = tiny_cfg();
  const ModelConfig mc = to_model_config(cfg);
  Rng init = make_rng(1);
  Model<float> model = build_baseline<float>(to_baseline_spec(cfg), mc, init);
  TrainState<float> state;
  const std::string dir = fresh_dir("ckpt_bad");
  const std::string path = dir + "/a.ckpt";
  save_checkpoint(path, model, state, 1234);
  const std::string good = slurp(path);

  // config hash mismatch is a verification failure, not an IO failure
  CHECK_THROWS_AS(load_checkpoint(path, model, state, 1235),
                  VerificationError);

  // major version bump: explicit refusal naming the versions
  {
    std::string bad = good;
    bad[8] = 2;  // little-endian u32 major right after the 8-byte magic
    spit(dir + "/major.ckpt", bad);
    try {
      load_checkpoint(dir + "/major.ckpt", model, state, 1234);
      CHECK(false);
    } catch (const IoError& e) {
      const std::string what = e.what();
      CHECK(what.find("major version 2") != std::string::npos);
      CHECK(what.find("refusing") != std::string::npos);
    } catch (...) {
      CHECK(false);
    }
  }

  // wrong magic
  {
    std::string bad = good;
    bad[0] = 'X';
    spit(dir + "/magic.ckpt", bad);
    CHECK_THROWS_AS(load_checkpoint(dir + "/magic.ckpt", model, state, 1234),
                    IoError);
  }

  // truncation
  spit(dir + "/trunc.ckpt", good.substr(0, good.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(dir + "/trunc.ckpt", model, state, 1234),
                  IoError);
  spit(dir + "/tiny.ckpt", good.substr(0, 11));
  CHECK_THROWS_AS(load_checkpoint(dir + "/tiny.ckpt", model, state, 1234),
                  IoError);

  // right hash, wrong architecture: parameter record mismatch
  RunConfig other = cfg;
  other.d_model = 24;
  Rng init2 = make_rng(1);
  Model<float> model24 =
      build_baseline<float>(to_baseline_spec(other), to_model_config(other), init2);
  CHECK_THROWS_AS(load_checkpoint(path, model24, state, 1234), IoError);

  // missing file
  CHECK_THROWS_AS(load_checkpoint(dir + "/absent.ckpt", model, state, 1234),
                  IoError);
}

// ---------------------------------------------------------------------------
// CSV and SVG layers.
// ---------------------------------------------------------------------------

TEST_CASE("csv round-trips and validates its stamp") {
  CsvTable t;
  t.tool = tool_id();
  t.config = 0xabcdef0123456789ull;
  t.columns = {"m", "n", "pass1"};
  t.rows = {{"2", "8", "0.5"}, {"4", "4", "0.25"}};
  const std::string text = csv_to_string(t);
  const CsvTable back = csv_from_string(text, "inline");
  CHECK(back.tool == t.tool);
  CHECK(back.config == t.config);
  CHECK(back.columns == t.columns);
  CHECK(back.rows == t.rows);
  CHECK(csv_to_string(back) == text);

  const std::string dir = fresh_dir("csv");
  write_csv(dir + "/a.csv", t);
  const CsvTable back2 = read_csv(dir + "/a.csv");
  CHECK(csv_to_string(back2) == text);

  CHECK(t.column_index("pass1") == 2);
  try {
    (void)t.column_index("bogus");
    CHECK(false);
  } catch (const UsageError& e) {
    CHECK(std::string(e.what()).find("m, n, pass1") != std::string::npos);
  }

  // stamp and shape validation
  CHECK_THROWS_AS(csv_from_string("m,n\n1,2\n", "x"), IoError);
  CHECK_THROWS_AS(csv_from_string("# other-1.0 config=0123456789abcdef\nm\n1\n", "x"),
                  IoError);
  CHECK_THROWS_AS(csv_from_string("# sr2-0.1.0 config=xyz\nm\n1\n", "x"), IoError);
  CHECK_THROWS_AS(
      csv_from_string("# sr2-0.1.0 config=0123456789abcdef\nm,n\n1\n", "x"),
      IoError);
  CHECK_THROWS_AS(csv_from_string("", "x"), IoError);

  CsvTable ragged = t;
  ragged.rows.push_back({"1", "2"});
  CHECK_THROWS_AS(csv_to_string(ragged), UsageError);
  CsvTable dirty = t;
  dirty.rows[0][0] = "a,b";
  CHECK_THROWS_AS(csv_to_string(dirty), UsageError);
}

TEST_CASE("svg chart marks every data point and escapes labels") {
  Series s1{"loss<train&test>", {{1, 0.5}, {2, 0.25}, {3, 0.125}}};
  Series s2{"acc", {{1, 0.1}, {2, 0.4}}};
  ChartLabels labels{"title", "epoch", "value"};
  const std::string svg = render_line_chart({s1, s2}, labels);

  std::size_t markers = 0, at = 0;
  while ((at = svg.find("class=\"marker\"", at)) != std::string::npos) {
    ++markers;
    ++at;
  }
  CHECK(markers == 5);
  CHECK(svg.find("loss&lt;train&amp;test&gt;") != std::string::npos);
  CHECK(svg.find("<svg") == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("<polyline") != std::string::npos);

  CHECK_THROWS_AS(render_line_chart({}, labels), UsageError);
  CHECK_THROWS_AS(render_line_chart({Series{"e", {}}}, labels), UsageError);
  // single-point, degenerate-range series still renders
  const std::string dot =
      render_line_chart({Series{"p", {{2.0, 2.0}}}}, labels);
  CHECK(dot.find("class=\"marker\"") != std::string::npos);
}

// ---------------------------------------------------------------------------
// CLI subcommands, end to end and in-process.
// ---------------------------------------------------------------------------

TEST_CASE("cli dispatch and exit codes") {
  std::string out, err;
  CHECK(cli({"help"}, &out) == 0);
  CHECK(out.find("generate-data") != std::string::npos);

  CHECK(cli({"conjure"}, &out, &err) == 1);
  CHECK(err.find("unknown subcommand") != std::string::npos);
  CHECK(cli({"train", "--bogus-flag", "1"}, &out, &err) == 1);
  CHECK(cli({"train", "--schedule.m"}, &out, &err) == 1);  // missing value
  CHECK(cli({"eval", "--dataset", "x.tsv"}, &out, &err) == 1);  // no checkpoint
  CHECK(cli({"generate-data", "--no.such_key", "3"}, &out, &err) == 1);
  CHECK(cli({"generate-data", "--task.name", "maze"}, &out, &err) == 1);
  CHECK(cli({"sweep", "--budget", "4", "--grid", "2x2"}, &out, &err) == 1);
  CHECK(cli({"generate-data", "--paper-counts", "chess"}, &out, &err) == 1);
}

TEST_CASE("generate-data is byte-deterministic and validator-clean") {
  const std::string d1 = fresh_dir("gen1");
  const std::string d2 = fresh_dir("gen2");
  const std::string d3 = fresh_dir("gen3");
  const std::vector<std::string> counts = {"--data.train_count", "24",
                                           "--data.test_count", "12"};
  std::string out;
  auto args = [&](const std::string& dir, const std::string& seed) {
    std::vector<std::string> a = {"generate-data", "--out", dir, "--seed", seed};
    a.insert(a.end(), counts.begin(), counts.end());
    return a;
  };
  REQUIRE(cli(args(d1, "7"), &out) == 0);
  CHECK(out.find("count=24") != std::string::npos);
  CHECK(out.find("count=12") != std::string::npos);
  REQUIRE(cli(args(d2, "7"), &out) == 0);
  CHECK(slurp(d1 + "/sudoku-train.tsv") == slurp(d2 + "/sudoku-train.tsv"));
  CHECK(slurp(d1 + "/sudoku-test.tsv") == slurp(d2 + "/sudoku-test.tsv"));
  REQUIRE(cli(args(d3, "8"), &out) == 0);
  CHECK(slurp(d1 + "/sudoku-train.tsv") != slurp(d3 + "/sudoku-train.tsv"));

  // the two splits share a recipe but no instances
  const Dataset train = read_dataset(d1 + "/sudoku-train.tsv");
  const Dataset test = read_dataset(d1 + "/sudoku-test.tsv");
  CHECK(dataset_recipe_hash(train.header) == dataset_recipe_hash(test.header));
  std::set<std::string> train_inputs;
  for (const Example& e : train.examples) {
    std::string k;
    for (int v : e.input) k += char('0' + v);
    train_inputs.insert(k);
  }
  for (const Example& e : test.examples) {
    std::string k;
    for (int v : e.input) k += char('0' + v);
    CHECK(train_inputs.count(k) == 0);
  }
}

TEST_CASE("generate-data covers maze and the paper-counts preset") {
  const std::string dm = fresh_dir("genmaze2");
  std::string out, err;
  REQUIRE(cli({"generate-data", "--out", dm, "--seed", "3", "--config",
               dm + "/missing.cfg"},
              &out, &err) == 3);  // absent config file is an IO failure
  REQUIRE(cli({"generate-data", "--out", dm, "--task", "chess"}, &out, &err) ==
          1);

  // a config file plus a --task=... override, both through the CLI surface
  const std::string cfgpath = dm + "/counts.cfg";
  RunConfig mcfg;
  mcfg.train_count = 10;
  mcfg.test_count = 6;
  save_config_file(cfgpath, mcfg);
  REQUIRE(cli({"generate-data", "--out", dm, "--seed", "3", "--config", cfgpath,
               "--task=maze"},
              &out, &err) == 0);
  const Dataset train = read_dataset(dm + "/maze-train.tsv");
  const Dataset test = read_dataset(dm + "/maze-test.tsv");
  CHECK(train.header.count == 10);
  CHECK(test.header.count == 6);
  CHECK(train.header.vocab_in == 4);
  CHECK(train.header.vocab_out == 2);
  // id ranges must clear the training *pool*, not just its count
  std::uint64_t min_test_id = ~0ull;
  for (const Example& e : test.examples) min_test_id = std::min(min_test_id, e.id);
  CHECK(min_test_id >= 40);  // pool = ceil(10 / 0.25)

  const std::string dp = fresh_dir("genpaper");
  REQUIRE(cli({"generate-data", "--out", dp, "--seed", "11", "--paper-counts",
               "sudoku"},
              &out) == 0);
  const Dataset paper_train = read_dataset(dp + "/sudoku-train.tsv");
  const Dataset paper_test = read_dataset(dp + "/sudoku-test.tsv");
  CHECK(paper_train.header.count == 1000);
  CHECK(paper_test.header.count == 1000);
}

namespace {

// Shared tiny training setup: generates data once and returns the flag set
// every training-flavour test reuses.
struct TinyRun {
  std::string dir;
  std::vector<std::string> flags;  // config overrides incl. --out dir

  explicit TinyRun(const std::string& name, const std::string& extra_m = "2",
                   const std::string& extra_n = "2") {
    dir = fresh_dir(name);
    flags = {"--out",
             dir,
             "--seed",
             "5",
             "--data.train_count",
             "16",
             "--data.test_count",
             "8",
             "--model.d_model",
             "16",
             "--model.heads",
             "2",
             "--schedule.m",
             extra_m,
             "--schedule.n",
             extra_n,
             "--train.batch_size",
             "8"};
    std::string out, err;
    std::vector<std::string> gen = {"generate-data"};
    gen.insert(gen.end(), flags.begin(), flags.end());
    REQUIRE(cli(gen, &out, &err) == 0);
  }

  std::vector<std::string> cmd(const std::string& sub,
                               std::vector<std::string> extra = {}) const {
    std::vector<std::string> a = {sub};
    a.insert(a.end(), flags.begin(), flags.end());
    a.insert(a.end(), extra.begin(), extra.end());
    return a;
  }
};

}  // namespace

TEST_CASE("train writes metrics, checkpoint, and resolved config") {
  TinyRun run("train_basic");
  std::string out, err;
  REQUIRE(cli(run.cmd("train", {"--train.epochs", "3"}), &out, &err) == 0);

  // metrics CSV: epochs x |A| rows (alignment=all with n=2 -> 2 per epoch)
  const CsvTable csv = read_csv(run.dir + "/train_metrics.csv");
  CHECK(csv.columns == std::vector<std::string>{"epoch", "block", "kind",
                                                "loss", "cell_acc", "pass1",
                                                "wall_s", "samples_per_s"});
  CHECK(csv.rows.size() == 3 * 2);
  CHECK(csv.rows[0][0] == "1");
  CHECK(csv.rows[0][1] == "1");
  CHECK(csv.rows[1][1] == "2");
  CHECK(csv.rows[5][0] == "3");
  CHECK(csv.rows[0][2] == "sr2");

  // resolved config round-trips and hashes to the artifact stamp
  const RunConfig saved = load_config_file(run.dir + "/train.cfg");
  CHECK(config_hash(saved) == csv.config);
  CHECK(saved.epochs == 3);

  CHECK(fs::exists(run.dir + "/model.ckpt"));
  CHECK(out.find("test: pass@1=") != std::string::npos);
}

TEST_CASE("train with lr=0 leaves parameters untouched") {
  TinyRun run("train_lr0");
  std::string out, err;
  REQUIRE(cli(run.cmd("train", {"--train.epochs", "2", "--train.lr", "0",
                                "--train.checkpoint_every", "1"}),
              &out, &err) == 0);

  RunConfig cfg = load_config_file(run.dir + "/train.cfg");
  const std::uint64_t h = config_hash(cfg);
  const ModelConfig mc = to_model_config(cfg);
  Rng r1 = make_rng(1), r2 = make_rng(2);
  Model<float> m_e1 = build_baseline<float>(to_baseline_spec(cfg), mc, r1);
  Model<float> m_fin = build_baseline<float>(to_baseline_spec(cfg), mc, r2);
  TrainState<float> s1, s2;
  load_checkpoint(run.dir + "/model-e1.ckpt", m_e1, s1, h);
  load_checkpoint(run.dir + "/model.ckpt", m_fin, s2, h);
  CHECK(s1.epoch == 1);
  CHECK(s2.epoch == 2);
  auto p1 = m_e1.params(), p2 = m_fin.params();
  REQUIRE(p1.size() == p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    CHECK(*p1[i]->data == *p2[i]->data);
  }
}

TEST_CASE("resume equals continuous training bit-exactly") {
  TinyRun a("resume_a");
  std::string out, err;
  REQUIRE(cli(a.cmd("train", {"--train.epochs", "4"}), &out, &err) == 0);

  TinyRun b("resume_b");
  // same data bytes by construction (same seed); verify to be safe
  REQUIRE(slurp(a.dir + "/sudoku-train.tsv") ==
          slurp(b.dir + "/sudoku-train.tsv"));
  REQUIRE(cli(b.cmd("train", {"--train.epochs", "2"}), &out, &err) == 0);
  REQUIRE(cli(b.cmd("train", {"--train.epochs", "4", "--resume",
                              b.dir + "/model.ckpt"}),
              &out, &err) == 0);
  CHECK(out.find("resumed") != std::string::npos);
  CHECK(slurp(a.dir + "/model.ckpt") == slurp(b.dir + "/model.ckpt"));

  // resuming under a semantically different config is refused
  REQUIRE(cli(b.cmd("train", {"--train.epochs", "6", "--resume",
                              b.dir + "/model.ckpt", "--train.lr", "0.9"}),
              &out, &err) == 2);
  CHECK(err.find("config hash mismatch") != std::string::npos);
}

TEST_CASE("eval reproduces training's final test numbers and is read-only") {
  TinyRun run("eval_match");
  std::string train_out, out, err;
  REQUIRE(cli(run.cmd("train", {"--train.epochs", "2"}), &train_out, &err) == 0);
  const std::string trained = metric_fields(train_out, "test:");
  REQUIRE_FALSE(trained.empty());

  const std::string ckpt = run.dir + "/model.ckpt";
  const std::string before = slurp(ckpt);
  REQUIRE(cli({"eval", "--config", run.dir + "/train.cfg", "--checkpoint",
               ckpt, "--dataset", run.dir + "/sudoku-test.tsv"},
              &out, &err) == 0);
  CHECK(metric_fields(out, "eval:") == trained);
  CHECK(slurp(ckpt) == before);  // side-effect-free on the checkpoint

  // horizon sweep: one CSV row per requested k, k=trained-n matches too
  REQUIRE(cli({"eval", "--config", run.dir + "/train.cfg", "--checkpoint",
               ckpt, "--dataset", run.dir + "/sudoku-test.tsv",
               "--test-steps", "2,1"},
              &out, &err) == 0);
  const CsvTable csv = read_csv(run.dir + "/eval_steps.csv");
  CHECK(csv.columns == std::vector<std::string>{"k", "loss", "cell_acc",
                                                "pass1", "samples_per_s"});
  REQUIRE(csv.rows.size() == 2);
  CHECK(csv.rows[0][0] == "2");
  CHECK(csv.rows[1][0] == "1");
  // the trained-horizon sweep entry scores exactly like the plain evaluation
  CHECK(metric_fields(out, "k=2:") == trained);
  CHECK(slurp(ckpt) == before);

  // wrong dataset task/geometry is a verification failure
  REQUIRE(cli({"eval", "--config", run.dir + "/train.cfg", "--checkpoint",
               ckpt, "--dataset", run.dir + "/sudoku-test.tsv",
               "--model.d_model", "24"},
              &out, &err) == 2);
}

TEST_CASE("ablate runs the eight-variant suite deterministically") {
  TinyRun run("ablate", "1", "4");  // n=4 so mixture(4) fits the budget
  std::string out, err;
  REQUIRE(cli(run.cmd("ablate", {"--train.epochs", "1"}), &out, &err) == 0);
  const std::string first = slurp(run.dir + "/ablate.csv");

  const CsvTable csv = read_csv(run.dir + "/ablate.csv");
  CHECK(csv.columns == std::vector<std::string>{"variant", "params", "data",
                                                "final_loss", "cell_acc",
                                                "pass1"});
  REQUIRE(csv.rows.size() == 8);
  const std::vector<std::string> expected = {
      "sr2_no_self_refinement", "sr2_no_reflection", "sr2_mixture(2)",
      "sr2_mixture(4)",         "sr2_separate_function", "reflective_model",
      "flattened_reflective",   "sr2"};
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(csv.rows[i][0] == expected[i]);
  }
  for (const auto& row : csv.rows) {
    CHECK(row[2] == csv.rows[0][2]);  // shared dataset hash
  }

  REQUIRE(cli(run.cmd("ablate", {"--train.epochs", "1"}), &out, &err) == 0);
  CHECK(slurp(run.dir + "/ablate.csv") == first);  // same seed, same bytes
}

TEST_CASE("sweep enumerates the fixed-budget grid in sorted order") {
  TinyRun run("sweep");
  std::string out, err;
  REQUIRE(cli(run.cmd("sweep", {"--train.epochs", "1", "--budget", "16"}),
              &out, &err) == 0);
  const CsvTable csv = read_csv(run.dir + "/sweep.csv");
  CHECK(csv.columns ==
        std::vector<std::string>{"m", "n", "final_loss", "cell_acc", "pass1"});
  REQUIRE(csv.rows.size() == 5);
  const std::vector<std::pair<std::string, std::string>> expected = {
      {"1", "16"}, {"2", "8"}, {"4", "4"}, {"8", "2"}, {"16", "1"}};
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(csv.rows[i][0] == expected[i].first);
    CHECK(csv.rows[i][1] == expected[i].second);
  }

  REQUIRE(cli(run.cmd("sweep", {"--train.epochs", "1", "--grid", "2x2,1x4"}),
              &out, &err) == 0);
  const CsvTable grid = read_csv(run.dir + "/sweep.csv");
  REQUIRE(grid.rows.size() == 2);
  CHECK(grid.rows[0][0] == "1");  // sorted by (m, n)
  CHECK(grid.rows[1][0] == "2");
  REQUIRE(cli(run.cmd("sweep", {"--grid", "2by2"}), &out, &err) == 1);
  REQUIRE(cli(run.cmd("sweep", {}), &out, &err) == 1);
}

TEST_CASE("plot renders a marker per data point") {
  const std::string dir = fresh_dir("plot");
  CsvTable t;
  t.tool = tool_id();
  t.config = 1;
  t.columns = {"k", "pass1", "who"};
  t.rows = {{"1", "0.5", "a"}, {"2", "0.75", "a"}};
  write_csv(dir + "/two.csv", t);

  std::string out, err;
  REQUIRE(cli({"plot", "--in", dir + "/two.csv", "--x", "k", "--y", "pass1",
               "--svg", dir + "/two.svg"},
              &out, &err) == 0);
  const std::string svg = slurp(dir + "/two.svg");
  std::size_t markers = 0, at = 0;
  while ((at = svg.find("class=\"marker\"", at)) != std::string::npos) {
    ++markers;
    ++at;
  }
  CHECK(markers == 2);

  // series grouping: two groups of two points -> four markers, two names
  CsvTable t4 = t;
  t4.rows = {{"1", "0.5", "a"}, {"2", "0.75", "a"}, {"1", "0.25", "b"},
             {"2", "0.5", "b"}};
  write_csv(dir + "/four.csv", t4);
  REQUIRE(cli({"plot", "--in", dir + "/four.csv", "--x", "k", "--y", "pass1",
               "--series", "who", "--svg", dir + "/four.svg"},
              &out, &err) == 0);
  const std::string svg4 = slurp(dir + "/four.svg");
  markers = 0;
  at = 0;
  while ((at = svg4.find("class=\"marker\"", at)) != std::string::npos) {
    ++markers;
    ++at;
  }
  CHECK(markers == 4);

  REQUIRE(cli({"plot", "--in", dir + "/two.csv", "--x", "k", "--y", "nope"},
              &out, &err) == 1);
  REQUIRE(cli({"plot", "--in", dir + "/two.csv", "--x", "who", "--y", "pass1"},
              &out, &err) == 1);  // non-numeric cells
}

TEST_CASE("ssm-verify reports and passes") {
  std::string out, err;
  REQUIRE(cli({"ssm-verify", "--instances", "6", "--seed", "42"}, &out, &err) == 0);
  CHECK(out.find("all checks passed") != std::string::npos);
  CHECK(out.find("worst map-vs-smoother difference") != std::string::npos);
  std::size_t lines = 0, at = 0;
  while ((at = out.find("pd=ok", at)) != std::string::npos) {
    ++lines;
    ++at;
  }
  CHECK(lines == 6);
  REQUIRE(cli({"ssm-verify", "--instances", "0"}, &out, &err) == 1);
}
