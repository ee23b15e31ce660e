#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace fpalign::csv {

struct Row {
  std::size_t line = 0;  // 1-based line number in the file
  std::vector<std::string> fields;
};

struct Table {
  std::vector<std::string> header;
  std::vector<Row> rows;

  /// Column position by name; throws Error(Data) when absent.
  std::size_t column(std::string_view name) const;
  bool has_column(std::string_view name) const;
};

/// Comma-separated with a header line. Double-quoted fields may contain
/// commas and doubled quotes. Blank lines are skipped.
Table read(const std::filesystem::path& path);

std::string escape(std::string_view field);

/// Parses a finite double; throws Error(Data) naming `line` and `column`.
double to_double(const std::string& s, std::size_t line, std::string_view column);

}  // namespace fpalign::csv
