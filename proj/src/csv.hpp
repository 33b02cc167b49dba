#pragma once

// Minimal comma-separated reading shared by the cycle and map loaders.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "ems/error.hpp"

namespace ems::detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && !s.empty();
}

struct CsvRow {
  std::size_t line = 0;  // 1-based line number in the file
  std::vector<std::string_view> fields;
};

// Reads non-blank lines; `storage` owns the text the fields point into.
inline std::vector<CsvRow> read_csv(const std::filesystem::path& path,
                                    std::vector<std::string>& storage) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  storage.clear();
  std::vector<std::size_t> numbers;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    storage.push_back(line);
    numbers.push_back(n);
  }
  std::vector<CsvRow> rows;
  rows.reserve(storage.size());
  for (std::size_t k = 0; k < storage.size(); ++k)
    rows.push_back({numbers[k], split_fields(storage[k])});
  return rows;
}

}  // namespace ems::detail
