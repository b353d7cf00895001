#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace recon::csv {

// Shortest round-trip decimal form (std::to_chars); NaN renders as an
// empty cell so optional metrics leave blanks.
std::string format_double(double v);
std::string format_int(long long v);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row);
};

std::string to_string(const Table& table);
void write_file(const std::filesystem::path& path, const Table& table);

Table parse(const std::string& text);
Table read_file(const std::filesystem::path& path);

}  // namespace recon::csv
