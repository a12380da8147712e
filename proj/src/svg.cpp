#include "sr2/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "sr2/errors.hpp"

namespace sr2 {

namespace {

constexpr double kWidth = 860, kHeight = 520;
constexpr double kLeft = 72, kRight = 26, kTop = 48, kBottom = 64;

const char* kPalette[] = {"#4363d8", "#e6194b", "#3cb44b", "#f58231",
                          "#911eb4", "#0f7f8b", "#f032e6", "#9a6324"};
constexpr std::size_t kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);

std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

struct AxisScale {
  double lo = 0, hi = 1, step = 1;
};

// Pads a degenerate range, then picks a 1/2/5-decade tick step so the axis
// shows 4..8 round-valued ticks.
AxisScale nice_axis(double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) {
    throw NumericError("chart: non-finite data range");
  }
  if (lo == hi) {
    const double pad = lo == 0 ? 1.0 : std::abs(lo) * 0.1;
    lo -= pad;
    hi += pad;
  }
  const double raw = (hi - lo) / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double frac = raw / mag;
  const double step = (frac <= 1 ? 1 : frac <= 2 ? 2 : frac <= 5 ? 5 : 10) * mag;
  return {lo, hi, step};
}

}  // namespace

std::string render_line_chart(const std::vector<Series>& series,
                              const ChartLabels& labels) {
  if (series.empty()) throw UsageError("chart: no series to draw");
  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo;
  double ylo = xlo, yhi = -xlo;
  std::size_t n_points = 0;
  for (const Series& s : series) {
    for (const auto& [x, y] : s.points) {
      xlo = std::min(xlo, x);
      xhi = std::max(xhi, x);
      ylo = std::min(ylo, y);
      yhi = std::max(yhi, y);
      ++n_points;
    }
  }
  if (n_points == 0) throw UsageError("chart: no data points to draw");

  const AxisScale xs = nice_axis(xlo, xhi);
  const AxisScale ys = nice_axis(ylo, yhi);
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  const auto px = [&](double x) {
    return kLeft + (x - xs.lo) / (xs.hi - xs.lo) * plot_w;
  };
  const auto py = [&](double y) {
    return kTop + plot_h - (y - ys.lo) / (ys.hi - ys.lo) * plot_h;
  };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) +
         "\" height=\"" + num(kHeight) + "\" viewBox=\"0 0 " + num(kWidth) +
         " " + num(kHeight) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  svg += "<style>text{font-family:Helvetica,Arial,sans-serif;fill:#222}"
         ".grid{stroke:#e4e4e4;stroke-width:1}"
         ".axis{stroke:#333;stroke-width:1.2}"
         ".tick{font-size:12px}.label{font-size:14px}"
         ".title{font-size:17px;font-weight:bold}"
         ".legend{font-size:13px}</style>\n";

  // grid and ticks
  for (double v = std::ceil(xs.lo / xs.step) * xs.step; v <= xs.hi + 1e-12;
       v += xs.step) {
    const double gx = px(v);
    svg += "<line class=\"grid\" x1=\"" + num(gx) + "\" y1=\"" + num(kTop) +
           "\" x2=\"" + num(gx) + "\" y2=\"" + num(kTop + plot_h) + "\"/>\n";
    svg += "<text class=\"tick\" x=\"" + num(gx) + "\" y=\"" +
           num(kTop + plot_h + 18) + "\" text-anchor=\"middle\">" +
           xml_escape(tick_label(v)) + "</text>\n";
  }
  for (double v = std::ceil(ys.lo / ys.step) * ys.step; v <= ys.hi + 1e-12;
       v += ys.step) {
    const double gy = py(v);
    svg += "<line class=\"grid\" x1=\"" + num(kLeft) + "\" y1=\"" + num(gy) +
           "\" x2=\"" + num(kLeft + plot_w) + "\" y2=\"" + num(gy) + "\"/>\n";
    svg += "<text class=\"tick\" x=\"" + num(kLeft - 8) + "\" y=\"" +
           num(gy + 4) + "\" text-anchor=\"end\">" +
           xml_escape(tick_label(v)) + "</text>\n";
  }

  // axes
  svg += "<line class=\"axis\" x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop) +
         "\" x2=\"" + num(kLeft) + "\" y2=\"" + num(kTop + plot_h) + "\"/>\n";
  svg += "<line class=\"axis\" x1=\"" + num(kLeft) + "\" y1=\"" +
         num(kTop + plot_h) + "\" x2=\"" + num(kLeft + plot_w) + "\" y2=\"" +
         num(kTop + plot_h) + "\"/>\n";

  // series
  for (std::size_t si = 0; si < series.size(); ++si) {
    const char* color = kPalette[si % kPaletteSize];
    const Series& s = series[si];
    if (s.points.size() > 1) {
      std::string pts;
      for (const auto& [x, y] : s.points) {
        pts += num(px(x)) + "," + num(py(y)) + " ";
      }
      svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
             "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
    }
    for (const auto& [x, y] : s.points) {
      svg += "<circle class=\"marker\" cx=\"" + num(px(x)) + "\" cy=\"" +
             num(py(y)) + "\" r=\"3.5\" fill=\"" + std::string(color) +
             "\"/>\n";
    }
  }

  // legend (top-right inside the plot area)
  const double lx = kLeft + plot_w - 170, ly0 = kTop + 10;
  for (std::size_t si = 0; si < series.size(); ++si) {
    const double ly = ly0 + 18 * static_cast<double>(si);
    svg += "<line x1=\"" + num(lx) + "\" y1=\"" + num(ly) + "\" x2=\"" +
           num(lx + 22) + "\" y2=\"" + num(ly) + "\" stroke=\"" +
           kPalette[si % kPaletteSize] + "\" stroke-width=\"2.5\"/>\n";
    svg += "<text class=\"legend\" x=\"" + num(lx + 28) + "\" y=\"" +
           num(ly + 4) + "\">" + xml_escape(series[si].name) + "</text>\n";
  }

  // labels
  if (!labels.title.empty()) {
    svg += "<text class=\"title\" x=\"" + num(kWidth / 2) +
           "\" y=\"26\" text-anchor=\"middle\">" + xml_escape(labels.title) +
           "</text>\n";
  }
  if (!labels.x_axis.empty()) {
    svg += "<text class=\"label\" x=\"" + num(kLeft + plot_w / 2) + "\" y=\"" +
           num(kHeight - 16) + "\" text-anchor=\"middle\">" +
           xml_escape(labels.x_axis) + "</text>\n";
  }
  if (!labels.y_axis.empty()) {
    svg += "<text class=\"label\" x=\"18\" y=\"" + num(kTop + plot_h / 2) +
           "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " +
           num(kTop + plot_h / 2) + ")\">" + xml_escape(labels.y_axis) +
           "</text>\n";
  }

  svg += "</svg>\n";
  return svg;
}

void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << body;
  out.flush();
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace sr2
