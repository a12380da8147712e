#include "sr2/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "sr2/config.hpp"
#include "sr2/errors.hpp"
#include "sr2/version.hpp"

namespace sr2 {

namespace {

void check_cell(const std::string& cell, const char* where) {
  for (char c : cell) {
    if (c == ',' || c == '\n' || c == '\r' || c == '\t') {
      throw UsageError(std::string("csv: ") + where + " '" + cell +
                       "' contains a separator character");
    }
  }
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::size_t CsvTable::column_index(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return i;
  }
  std::string have;
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (i) have += ", ";
    have += columns[i];
  }
  throw UsageError("csv: no column '" + name + "' (columns: " + have + ")");
}

std::string csv_to_string(const CsvTable& t) {
  if (t.columns.empty()) throw UsageError("csv: table has no columns");
  std::string out = "# " + (t.tool.empty() ? tool_id() : t.tool) +
                    " config=" + hex_u64(t.config) + "\n";
  for (std::size_t i = 0; i < t.columns.size(); ++i) {
    check_cell(t.columns[i], "column name");
    if (i) out += ',';
    out += t.columns[i];
  }
  out += '\n';
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    if (t.rows[r].size() != t.columns.size()) {
      throw UsageError("csv: row " + std::to_string(r + 1) + " has " +
                       std::to_string(t.rows[r].size()) + " cells, table has " +
                       std::to_string(t.columns.size()) + " columns");
    }
    for (std::size_t i = 0; i < t.rows[r].size(); ++i) {
      check_cell(t.rows[r][i], "cell");
      if (i) out += ',';
      out += t.rows[r][i];
    }
    out += '\n';
  }
  return out;
}

CsvTable csv_from_string(const std::string& text, const std::string& origin) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw IoError(origin + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  CsvTable t;
  {
    std::istringstream stamp(line);
    std::string hash_mark, tool, config_kv;
    stamp >> hash_mark >> tool >> config_kv;
    std::string extra;
    if (hash_mark != "#" || tool.empty() || config_kv.empty() ||
        (stamp >> extra)) {
      throw IoError(origin + ": first line must be '# <tool> config=<hex>'");
    }
    if (tool.rfind(std::string(kToolName) + "-", 0) != 0) {
      throw IoError(origin + ": unrecognised producing tool '" + tool + "'");
    }
    if (config_kv.rfind("config=", 0) != 0 || config_kv.size() != 7 + 16) {
      throw IoError(origin + ": malformed config stamp '" + config_kv + "'");
    }
    const char* first = config_kv.data() + 7;
    const char* last = config_kv.data() + config_kv.size();
    const auto [p, ec] = std::from_chars(first, last, t.config, 16);
    if (ec != std::errc() || p != last) {
      throw IoError(origin + ": malformed config stamp '" + config_kv + "'");
    }
    t.tool = tool;
  }

  if (!std::getline(is, line)) throw IoError(origin + ": missing column row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  t.columns = split_commas(line);
  if (t.columns.empty() || t.columns[0].empty()) {
    throw IoError(origin + ": malformed column row '" + line + "'");
  }

  std::size_t line_no = 2;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> row = split_commas(line);
    if (row.size() != t.columns.size()) {
      throw IoError(origin + ":" + std::to_string(line_no) + ": row has " +
                    std::to_string(row.size()) + " cells, table has " +
                    std::to_string(t.columns.size()) + " columns");
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

void write_csv(const std::string& path, const CsvTable& t) {
  const std::string body = csv_to_string(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("csv: cannot write " + path);
  out << body;
  out.flush();
  if (!out) throw IoError("csv: write failed for " + path);
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("csv: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return csv_from_string(ss.str(), path);
}

}  // namespace sr2
