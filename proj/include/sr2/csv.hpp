#pragma once

// The single tabular interchange format: a stamp line carrying the tool id
// and the resolved-config hash, a column-name row, then data rows. Cells
// never contain separators (writing such a cell is an error), so the format
// needs no quoting and equal tables serialise to identical bytes.
//
//   # sr2-0.1.0 config=00e1d2c3b4a59687
//   epoch,block,loss
//   1,4,1.386

#include <cstdint>
#include <string>
#include <vector>

namespace sr2 {

struct CsvTable {
  std::string tool;             // producing tool id, e.g. "sr2-0.1.0"
  std::uint64_t config = 0;     // resolved-config hash
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  // Column index by name; throws UsageError naming the available columns.
  std::size_t column_index(const std::string& name) const;
};

std::string csv_to_string(const CsvTable& t);
CsvTable csv_from_string(const std::string& text, const std::string& origin);

void write_csv(const std::string& path, const CsvTable& t);
CsvTable read_csv(const std::string& path);

}  // namespace sr2
