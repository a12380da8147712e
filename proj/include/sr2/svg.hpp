#pragma once

// Self-contained SVG line charts: axes, ticks, grid, legend, one polyline
// per series, and one marker circle per data point. No display or library
// dependency; the output is a complete standalone .svg document.

#include <string>
#include <utility>
#include <vector>

namespace sr2 {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;  // (x, y) in row order
};

struct ChartLabels {
  std::string title;
  std::string x_axis;
  std::string y_axis;
};

std::string render_line_chart(const std::vector<Series>& series,
                              const ChartLabels& labels);

void write_text_file(const std::string& path, const std::string& body);

}  // namespace sr2
