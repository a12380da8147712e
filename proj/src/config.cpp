#include "sr2/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <string_view>

#include "sr2/version.hpp"

namespace sr2 {

namespace {

struct FieldDef {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const char* want) {
  throw UsageError("config: key '" + key + "' needs " + want + ", got '" +
                   value + "'");
}

long long parse_ll(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    bad_value(key, v, "an integer");
  }
  return out;
}

std::uint64_t parse_u64_value(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    bad_value(key, v, "an unsigned integer");
  }
  return out;
}

double parse_dbl(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    bad_value(key, v, "a number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

const std::vector<FieldDef>& fields() {
  static const std::vector<FieldDef> defs = [] {
    std::vector<FieldDef> f;
    const auto str = [&](const char* key, std::string RunConfig::* mem) {
      f.push_back({key, [mem](const RunConfig& c) { return c.*mem; },
                   [mem](RunConfig& c, const std::string& v) { c.*mem = v; }});
    };
    const auto num = [&](const char* key, int RunConfig::* mem) {
      f.push_back({key,
                   [mem](const RunConfig& c) { return std::to_string(c.*mem); },
                   [mem, key](RunConfig& c, const std::string& v) {
                     c.*mem = static_cast<int>(parse_ll(key, v));
                   }});
    };
    const auto lng = [&](const char* key, long RunConfig::* mem) {
      f.push_back({key,
                   [mem](const RunConfig& c) { return std::to_string(c.*mem); },
                   [mem, key](RunConfig& c, const std::string& v) {
                     c.*mem = static_cast<long>(parse_ll(key, v));
                   }});
    };
    const auto dbl = [&](const char* key, double RunConfig::* mem) {
      f.push_back({key,
                   [mem](const RunConfig& c) { return format_double(c.*mem); },
                   [mem, key](RunConfig& c, const std::string& v) {
                     c.*mem = parse_dbl(key, v);
                   }});
    };
    const auto bol = [&](const char* key, bool RunConfig::* mem) {
      f.push_back({key,
                   [mem](const RunConfig& c) {
                     return std::string(c.*mem ? "true" : "false");
                   },
                   [mem, key](RunConfig& c, const std::string& v) {
                     c.*mem = parse_bool(key, v);
                   }});
    };
    const auto u64 = [&](const char* key, std::uint64_t RunConfig::* mem) {
      f.push_back({key,
                   [mem](const RunConfig& c) { return std::to_string(c.*mem); },
                   [mem, key](RunConfig& c, const std::string& v) {
                     c.*mem = parse_u64_value(key, v);
                   }});
    };

    str("task", &RunConfig::task);
    num("data.box", &RunConfig::box);
    num("data.clues", &RunConfig::clues);
    num("data.maze_width", &RunConfig::maze_width);
    num("data.maze_height", &RunConfig::maze_height);
    dbl("data.keep_fraction", &RunConfig::keep_fraction);
    lng("data.train_count", &RunConfig::train_count);
    lng("data.test_count", &RunConfig::test_count);
    bol("data.augment", &RunConfig::augment);
    str("model.kind", &RunConfig::kind);
    num("model.depth", &RunConfig::depth);
    num("model.d_model", &RunConfig::d_model);
    num("model.heads", &RunConfig::n_heads);
    num("model.mlp_mult", &RunConfig::mlp_mult);
    dbl("model.init_scale", &RunConfig::init_scale);
    num("schedule.m", &RunConfig::m);
    num("schedule.n", &RunConfig::n);
    str("schedule.reflection", &RunConfig::reflection);
    str("schedule.alignment", &RunConfig::alignment);
    bol("schedule.detach", &RunConfig::detach);
    num("schedule.test_time_blocks", &RunConfig::test_time_blocks);
    dbl("train.lr", &RunConfig::lr);
    dbl("train.beta1", &RunConfig::beta1);
    dbl("train.beta2", &RunConfig::beta2);
    num("train.epochs", &RunConfig::epochs);
    num("train.batch_size", &RunConfig::batch_size);
    bol("train.summed_losses", &RunConfig::summed_losses);
    bol("train.mask_blanks", &RunConfig::mask_blanks);
    num("train.checkpoint_every", &RunConfig::checkpoint_every);
    u64("run.seed", &RunConfig::seed);
    num("run.threads", &RunConfig::threads);
    str("run.out_dir", &RunConfig::out_dir);
    return f;
  }();
  return defs;
}

const FieldDef& find_field(const std::string& key) {
  for (const FieldDef& f : fields()) {
    if (key == f.key) return f;
  }
  throw UsageError("config: unknown key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::istringstream is(v);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (item.empty()) bad_value(key, v, "a comma-separated integer list");
    out.push_back(static_cast<int>(parse_ll(key, item)));
  }
  if (out.empty()) bad_value(key, v, "a comma-separated integer list");
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw NumericError("format_double failed");
  return std::string(buf, p);
}

std::string hex_u64(std::uint64_t v) {
  char buf[17];
  for (int i = 15; i >= 0; --i) {
    buf[i] = "0123456789abcdef"[v & 0xf];
    v >>= 4;
  }
  return std::string(buf, 16);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const FieldDef& f : fields()) keys.emplace_back(f.key);
  return keys;
}

void set_config_value(RunConfig& cfg, const std::string& key,
                      const std::string& value) {
  find_field(key).set(cfg, value);
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) {
  return find_field(key).get(cfg);
}

std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  for (const FieldDef& f : fields()) {
    out += f.key;
    out += " = ";
    out += f.get(cfg);
    out += '\n';
  }
  return out;
}

RunConfig parse_config_text(const std::string& text,
                            const std::string& origin) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(origin + ":" + std::to_string(line_no) +
                       ": expected 'key = value', got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      set_config_value(cfg, key, value);
    } catch (const UsageError& e) {
      throw UsageError(origin + ":" + std::to_string(line_no) + ": " +
                       e.what());
    }
  }
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

void save_config_file(const std::string& path, const RunConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("config: cannot write " + path);
  out << serialize_config(cfg);
}

std::uint64_t config_hash(const RunConfig& cfg) {
  std::string canon;
  for (const FieldDef& f : fields()) {
    const std::string_view key = f.key;
    if (key == "train.epochs" || key == "train.checkpoint_every" ||
        key == "run.threads" || key == "run.out_dir") {
      continue;
    }
    canon += f.key;
    canon += " = ";
    canon += f.get(cfg);
    canon += '\n';
  }
  return fnv1a64(canon);
}

void validate_config(const RunConfig& cfg) {
  if (cfg.task != "sudoku" && cfg.task != "maze") {
    throw UsageError("config: task must be sudoku or maze, got '" + cfg.task +
                     "'");
  }
  if (cfg.train_count < 1 || cfg.test_count < 1) {
    throw UsageError("config: data counts must be >= 1");
  }
  if (cfg.epochs < 0) throw UsageError("config: train.epochs must be >= 0");
  if (cfg.batch_size < 1) throw UsageError("config: train.batch_size must be >= 1");
  if (cfg.threads < 1) throw UsageError("config: run.threads must be >= 1");
  if (cfg.checkpoint_every < 0) {
    throw UsageError("config: train.checkpoint_every must be >= 0");
  }
  if (cfg.out_dir.empty()) throw UsageError("config: run.out_dir must be set");
  to_model_config(cfg).validate();
  to_baseline_spec(cfg).validate();
}

ModelConfig to_model_config(const RunConfig& cfg) {
  ModelConfig mc;
  mc.d_model = cfg.d_model;
  mc.n_heads = cfg.n_heads;
  mc.mlp_mult = cfg.mlp_mult;
  mc.init_scale = cfg.init_scale;
  if (cfg.task == "sudoku") {
    const int side = cfg.box * cfg.box;
    mc.seq_len = side * side;
    mc.vocab_in = side + 1;
    mc.vocab_out = side + 1;
  } else if (cfg.task == "maze") {
    mc.seq_len = cfg.maze_width * cfg.maze_height;
    mc.vocab_in = 4;
    mc.vocab_out = 2;
  } else {
    throw UsageError("config: task must be sudoku or maze, got '" + cfg.task +
                     "'");
  }
  return mc;
}

SR2Config to_sr2_config(const RunConfig& cfg) {
  SR2Config s;
  s.m = cfg.m;
  s.n = cfg.n;
  s.reflection_blocks = parse_int_list("schedule.reflection", cfg.reflection);
  if (cfg.alignment == "all") {
    s.alignment_set.clear();
  } else {
    s.alignment_set = parse_int_list("schedule.alignment", cfg.alignment);
  }
  s.detach_between_blocks = cfg.detach;
  s.test_time_blocks = cfg.test_time_blocks;
  return s;
}

BaselineSpec to_baseline_spec(const RunConfig& cfg) {
  BaselineSpec spec;
  spec.kind = parse_baseline_kind(cfg.kind, &spec.mixture_k);
  spec.sr2 = to_sr2_config(cfg);
  spec.depth = cfg.depth;
  return spec;
}

int mask_token_for_task(const std::string& task) {
  return task == "sudoku" ? 0 : -1;
}

}  // namespace sr2
