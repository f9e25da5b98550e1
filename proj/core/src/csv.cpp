#include "sta4clc/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>

#include "sta4clc/error.hpp"

namespace sta4clc::csv {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back(trim(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  out.emplace_back(trim(field));
  return out;
}

Table Table::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse(in, path.string());
}

Table Table::parse(std::istream& in, std::string source_name) {
  Table t;
  t.source_ = std::move(source_name);
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    auto fields = split_line(line);
    if (!have_header) {
      t.header_ = std::move(fields);
      for (std::size_t i = 0; i < t.header_.size(); ++i) {
        if (!t.index_.emplace(t.header_[i], i).second)
          throw DataError(t.source_ + ":" + std::to_string(lineno) + ": duplicate column '" + t.header_[i] + "'");
      }
      have_header = true;
      continue;
    }
    if (fields.size() != t.header_.size())
      throw DataError(t.source_ + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header_.size()) +
                      " fields, found " + std::to_string(fields.size()));
    t.rows_.push_back(std::move(fields));
    t.lines_.push_back(lineno);
  }
  if (!have_header) throw DataError(t.source_ + ": missing header row");
  return t;
}

bool Table::has_column(std::string_view name) const { return index_.count(std::string(name)) > 0; }

std::size_t Table::column(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw DataError(source_ + ": missing required column '" + std::string(name) + "'");
  return it->second;
}

std::string Table::where(std::size_t row) const { return source_ + ":" + std::to_string(lines_[row]) + ": "; }

double Table::number(std::size_t row, std::size_t col) const {
  const std::string& s = rows_[row][col];
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw DataError(where(row) + "column '" + header_[col] + "': not a number: '" + s + "'");
  if (!std::isfinite(v)) throw DataError(where(row) + "column '" + header_[col] + "': non-finite value '" + s + "'");
  return v;
}

long long Table::integer(std::size_t row, std::size_t col) const {
  const std::string& s = rows_[row][col];
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw DataError(where(row) + "column '" + header_[col] + "': not an integer: '" + s + "'");
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace sta4clc::csv
