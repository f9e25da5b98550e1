#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sta4clc::csv {

/// A header-indexed CSV table. Fields are plain comma-separated values;
/// double-quoted fields may contain commas.
class Table {
 public:
  static Table read(const std::filesystem::path& path);
  static Table parse(std::istream& in, std::string source_name);

  const std::string& source() const { return source_; }
  const std::vector<std::string>& header() const { return header_; }
  std::size_t rows() const { return rows_.size(); }
  /// 1-based line number of a data row in the source file.
  std::size_t line_of(std::size_t row) const { return lines_[row]; }
  bool has_column(std::string_view name) const;
  /// Throws DataError when absent.
  std::size_t column(std::string_view name) const;

  const std::string& cell(std::size_t row, std::size_t col) const { return rows_[row][col]; }
  /// Finite double or DataError naming file, line and column.
  double number(std::size_t row, std::size_t col) const;
  long long integer(std::size_t row, std::size_t col) const;

  /// "file:line: " prefix for diagnostics.
  std::string where(std::size_t row) const;

 private:
  std::string source_;
  std::vector<std::string> header_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::vector<std::string>> rows_;
  std::vector<std::size_t> lines_;
};

std::vector<std::string> split_line(std::string_view line);

/// Shortest round-trip decimal representation.
std::string format_double(double v);

}  // namespace sta4clc::csv
