#pragma once

#include <string>
#include <vector>

namespace duacm {

/// Tab-separated report table with a header row. Cells must not contain
/// tabs or newlines.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row);
  std::string to_tsv() const;
  static Table from_tsv(const std::string& text);
};

}  // namespace duacm
