#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace condensa {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of `name` in the header; throws DomainError naming the column.
  std::size_t column(const std::string& name) const;
};

CsvTable parse_csv(const std::string& text);
CsvTable read_csv(const std::filesystem::path& path);

/// Self-contained SVG line chart, one polyline per y column. Non-finite
/// points are skipped. Output depends only on the table contents.
std::string render_line_chart(const CsvTable& table, const std::string& x, std::span<const std::string> ys);

void emit_plot(const std::filesystem::path& csv, const std::string& x, std::span<const std::string> ys,
               const std::filesystem::path& out);

}  // namespace condensa
