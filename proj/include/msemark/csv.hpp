#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace msemark::csv {

struct Row {
  std::size_t line = 0;  // 1-based line of the first character
  std::vector<std::string> fields;
};

/// Minimal RFC 4180 reader: quoted fields, doubled quotes, CRLF.
class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}
  /// Next record, or nullopt at end of input. Blank lines are skipped.
  std::optional<Row> next();
  /// True when the last record ended without a line terminator.
  bool last_row_unterminated() const noexcept { return unterminated_; }

 private:
  std::istream& in_;
  std::size_t line_ = 1;
  bool unterminated_ = false;
};

std::string escape(std::string_view field);
void write_row(std::ostream& out, const std::vector<std::string>& fields);

/// Shortest text that round-trips the double exactly.
std::string format_exact(double value);
/// Fixed 10 significant digits; used for summaries.
std::string format(double value);

std::optional<double> parse_double(std::string_view text);
std::optional<long long> parse_int(std::string_view text);

/// Index of `name` in `header`, or nullopt.
std::optional<std::size_t> find_column(const std::vector<std::string>& header, std::string_view name);

}  // namespace msemark::csv
