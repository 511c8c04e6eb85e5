#include "duacm/table.hpp"

#include "duacm/error.hpp"
#include "duacm/text.hpp"

namespace duacm {

void Table::add_row(std::vector<std::string> row) {
  if (row.size() != columns.size()) {
    throw ValidationError("table row has " + std::to_string(row.size()) + " cells, expected " +
                          std::to_string(columns.size()));
  }
  for (const auto& cell : row) {
    if (cell.find_first_of("\t\n\r") != std::string::npos) {
      throw ValidationError("table cell contains a tab or newline");
    }
  }
  rows.push_back(std::move(row));
}

std::string Table::to_tsv() const {
  std::string out;
  auto emit = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += '\t';
      out += cells[i];
    }
    out += '\n';
  };
  emit(columns);
  for (const auto& r : rows) emit(r);
  return out;
}

Table Table::from_tsv(const std::string& text) {
  Table t;
  bool header = true;
  for (auto line : split_view(text, '\n')) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    for (auto c : split_view(line, '\t')) cells.emplace_back(c);
    if (header) {
      t.columns = std::move(cells);
      header = false;
    } else {
      if (cells.size() != t.columns.size()) throw ParseError("table row width mismatch");
      t.rows.push_back(std::move(cells));
    }
  }
  return t;
}

}  // namespace duacm
