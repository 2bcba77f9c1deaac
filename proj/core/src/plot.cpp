#include "condensa/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>

#include "condensa/error.hpp"

namespace condensa {
namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 150, kTop = 30, kBottom = 60;
constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

double parse_number(const std::string& cell, std::size_t row, const std::string& column) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != cell.size()) {
    throw DomainError(fmt::format("non-numeric cell '{}' at row {} column '{}'", cell, row + 1, column));
  }
  return v;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::pair<double, double> padded_range(double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) return {0.0, 1.0};
  if (hi - lo < 1e-12) return {lo - 0.5, hi + 0.5};
  return {lo, hi};
}

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw DomainError(fmt::format("missing column '{}'", name));
  return static_cast<std::size_t>(it - header.begin());
}

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size()) {
        throw DomainError(fmt::format("csv row {} has {} cells, header has {}", t.rows.size() + 1, cells.size(),
                                      t.header.size()));
      }
      t.rows.push_back(std::move(cells));
    }
  }
  if (first) throw DomainError("csv has no header");
  return t;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

std::string render_line_chart(const CsvTable& table, const std::string& x, std::span<const std::string> ys) {
  if (ys.empty()) throw DomainError("plot needs at least one y column");
  const std::size_t xc = table.column(x);
  std::vector<std::size_t> ycs;
  for (const auto& y : ys) ycs.push_back(table.column(y));

  std::vector<double> xs;
  std::vector<std::vector<double>> series(ycs.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    xs.push_back(parse_number(table.rows[r][xc], r, x));
    for (std::size_t s = 0; s < ycs.size(); ++s) series[s].push_back(parse_number(table.rows[r][ycs[s]], r, ys[s]));
  }

  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo, ylo = xlo, yhi = -xlo;
  for (std::size_t s = 0; s < series.size(); ++s)
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (!std::isfinite(xs[i]) || !std::isfinite(series[s][i])) continue;
      xlo = std::min(xlo, xs[i]);
      xhi = std::max(xhi, xs[i]);
      ylo = std::min(ylo, series[s][i]);
      yhi = std::max(yhi, series[s][i]);
    }
  std::tie(xlo, xhi) = padded_range(xlo, xhi);
  std::tie(ylo, yhi) = padded_range(ylo, yhi);
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double v) { return kLeft + (v - xlo) / (xhi - xlo) * pw; };
  auto py = [&](double v) { return kTop + ph - (v - ylo) / (yhi - ylo) * ph; };

  std::string svg;
  auto out = std::back_inserter(svg);
  fmt::format_to(out,
                 "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0:.0f}\" height=\"{1:.0f}\" "
                 "viewBox=\"0 0 {0:.0f} {1:.0f}\" font-family=\"sans-serif\" font-size=\"12\">\n",
                 kWidth, kHeight);
  fmt::format_to(out, "<rect width=\"{:.0f}\" height=\"{:.0f}\" fill=\"white\"/>\n", kWidth, kHeight);
  fmt::format_to(out,
                 "<g stroke=\"black\" stroke-width=\"1\"><line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{2:.2f}\" "
                 "y2=\"{1:.2f}\"/><line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{3:.2f}\"/></g>\n",
                 kLeft, kTop + ph, kLeft + pw, kTop);
  for (int i = 0; i <= 4; ++i) {
    const double fx = xlo + (xhi - xlo) * i / 4.0, fy = ylo + (yhi - ylo) * i / 4.0;
    fmt::format_to(out, "<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{:.3g}</text>\n", px(fx),
                   kTop + ph + 18, fx);
    fmt::format_to(out, "<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"end\">{:.3g}</text>\n", kLeft - 6,
                   py(fy) + 4, fy);
  }
  fmt::format_to(out, "<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{}</text>\n", kLeft + pw / 2,
                 kHeight - 15, escape(x));
  std::string ylabel;
  for (std::size_t s = 0; s < ys.size(); ++s) ylabel += (s ? ", " : "") + ys[s];
  fmt::format_to(out,
                 "<text x=\"15\" y=\"{0:.2f}\" text-anchor=\"middle\" transform=\"rotate(-90 15 {0:.2f})\">{1}</text>\n",
                 kTop + ph / 2, escape(ylabel));

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kColors[s % std::size(kColors)];
    std::string points;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (!std::isfinite(xs[i]) || !std::isfinite(series[s][i])) continue;
      if (!points.empty()) points += ' ';
      points += fmt::format("{:.2f},{:.2f}", px(xs[i]), py(series[s][i]));
    }
    if (!points.empty()) {
      fmt::format_to(out, "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n", color, points);
    }
    const double ly = kTop + 10 + 18.0 * static_cast<double>(s);
    fmt::format_to(out,
                   "<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{2:.2f}\" y2=\"{1:.2f}\" stroke=\"{3}\" stroke-width=\"2\"/>"
                   "<text x=\"{4:.2f}\" y=\"{5:.2f}\">{6}</text>\n",
                   kLeft + pw + 10, ly, kLeft + pw + 30, color, kLeft + pw + 36, ly + 4, escape(ys[s]));
  }
  svg += "</svg>\n";
  return svg;
}

void emit_plot(const std::filesystem::path& csv, const std::string& x, std::span<const std::string> ys,
               const std::filesystem::path& out) {
  const std::string svg = render_line_chart(read_csv(csv), x, ys);
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + out.string() + " for writing");
  f << svg;
}

}  // namespace condensa
