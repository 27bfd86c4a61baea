#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace xdistill {

inline constexpr int kCsvSchemaVersion = 1;

// Shortest decimal that round-trips to the same double.
std::string csv_number(double v);
std::string csv_number(std::uint64_t v);

// Comma-separated table whose first line is "# xdistill-csv v1 <schema>".
class CsvTable {
 public:
  CsvTable(std::string schema, std::vector<std::string> columns);

  void add_row(std::vector<std::string> cells);
  std::size_t rows() const noexcept { return rows_.size(); }
  std::string str() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::string schema_;
  std::vector<std::string> columns_;
  std::vector<std::vector<std::string>> rows_;
};

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace xdistill
