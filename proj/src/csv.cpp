#include "qmon/csv.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <ostream>

#include "qmon/error.hpp"

namespace qmon {

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  std::array<char, 32> buffer{};
  const auto result = std::to_chars(buffer.data(), buffer.data() + buffer.size(), value);
  return std::string(buffer.data(), result.ptr);
}

CsvWriter::CsvWriter(std::ostream& out, std::vector<std::string> columns) : out_(out), columns_(std::move(columns)) {}

void CsvWriter::comment(std::string_view line) {
  if (header_written_) throw Error("CSV comments must precede the header row");
  out_ << "# " << line << '\n';
}

void CsvWriter::ensure_header() {
  if (header_written_) return;
  for (std::size_t i = 0; i < columns_.size(); ++i) out_ << (i ? "," : "") << columns_[i];
  out_ << '\n';
  header_written_ = true;
}

void CsvWriter::row(std::initializer_list<double> values) { row(std::vector<double>(values)); }

void CsvWriter::row(const std::vector<double>& values) {
  if (values.size() != columns_.size()) throw Error("CSV row width does not match header");
  ensure_header();
  for (std::size_t i = 0; i < values.size(); ++i) out_ << (i ? "," : "") << format_double(values[i]);
  out_ << '\n';
}

void CsvWriter::row_cells(const std::vector<std::string>& cells) {
  if (cells.size() != columns_.size()) throw Error("CSV row width does not match header");
  ensure_header();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    out_ << (i ? "," : "");
    const std::string& c = cells[i];
    if (c.find_first_of(",\"\n") == std::string::npos) {
      out_ << c;
      continue;
    }
    out_ << '"';
    for (char ch : c) out_ << (ch == '"' ? "\"\"" : std::string(1, ch));
    out_ << '"';
  }
  out_ << '\n';
}

}  // namespace qmon
