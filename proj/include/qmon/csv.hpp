#pragma once

#include <initializer_list>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace qmon {

// Shortest round-trip decimal representation; identical across runs.
std::string format_double(double value);

// Minimal CSV emitter: '#' comment lines, one header row, numeric rows.
class CsvWriter {
 public:
  CsvWriter(std::ostream& out, std::vector<std::string> columns);

  void comment(std::string_view line);
  void row(std::initializer_list<double> values);
  void row(const std::vector<double>& values);
  // Mixed rows (e.g. labels). Cells containing commas, quotes or newlines are
  // quoted; all others are written verbatim.
  void row_cells(const std::vector<std::string>& cells);

 private:
  void ensure_header();

  std::ostream& out_;
  std::vector<std::string> columns_;
  bool header_written_ = false;
};

}  // namespace qmon
