#pragma once

// Minimal CSV support for the artifact's file formats: comma separated, no
// quoting, "." decimal separator, LF line endings (a trailing CR is dropped).

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "lshazard/error.hpp"

namespace lshazard::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  [[nodiscard]] std::optional<std::size_t> column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return std::nullopt;
  }

  [[nodiscard]] std::size_t require_column(std::string_view name, const std::string& source) const {
    if (auto c = column(name)) return *c;
    throw DataError(source + ": missing column '" + std::string(name) + "'");
  }
};

[[nodiscard]] inline std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      fields.emplace_back(line.substr(start));
      break;
    }
    fields.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

[[nodiscard]] inline Table parse(std::istream& in) {
  Table t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (first) {
      t.header = split_line(line);
      first = false;
      continue;
    }
    if (line.empty()) continue;
    t.rows.push_back(split_line(line));
  }
  return t;
}

[[nodiscard]] inline Table read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file '" + path + "'");
  Table t = parse(in);
  if (t.header.empty() || (t.header.size() == 1 && t.header[0].empty()))
    throw DataError(path + ": missing header row");
  return t;
}

[[nodiscard]] inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || first == last) return std::nullopt;
  return v;
}

[[nodiscard]] inline std::optional<long long> parse_int(std::string_view s) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

// Field parsers for row loops that collect issues: throw std::invalid_argument
// naming the column.
[[nodiscard]] inline double field_double(const std::vector<std::string>& row, std::size_t col, std::string_view name) {
  if (col < row.size())
    if (auto v = parse_double(row[col])) return *v;
  throw std::invalid_argument("column '" + std::string(name) + "' is not a number");
}

[[nodiscard]] inline int field_int(const std::vector<std::string>& row, std::size_t col, std::string_view name) {
  if (col < row.size())
    if (auto v = parse_int(row[col])) return static_cast<int>(*v);
  throw std::invalid_argument("column '" + std::string(name) + "' is not an integer");
}

// 17 significant digits: reading the text back reproduces the double exactly.
[[nodiscard]] inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Short human-oriented formatting for labels such as q and P.
[[nodiscard]] inline std::string format_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

class Writer {
 public:
  explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw Error("io_error", "cannot write file '" + path + "'");
  }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << fields[i];
    }
    out_ << '\n';
    if (!out_) throw Error("io_error", "write failed for '" + path_ + "'");
  }

 private:
  std::string path_;
  std::ofstream out_;
};

}  // namespace lshazard::csv
