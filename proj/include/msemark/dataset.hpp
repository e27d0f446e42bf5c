#pragma once

// Incident datasets: ingestion, list collapsing, stratification, and
// capture-pattern tabulation.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace msemark {

inline constexpr std::size_t kMaxLists = 16;

/// Which lists reported an incident. Bit j is list j (0-based).
struct CapturePattern {
  std::uint32_t bits = 0;

  bool captured_by(std::size_t list) const noexcept { return (bits >> list) & 1U; }
  int list_count() const noexcept;
  bool empty() const noexcept { return bits == 0; }
  /// "1010" style rendering with list 1 first.
  std::string to_string(std::size_t num_lists) const;

  friend auto operator<=>(const CapturePattern&, const CapturePattern&) = default;
};

struct Date {
  int year = 0;
  int month = 0;
  int day = 0;

  static std::optional<Date> parse_iso(const std::string& text);
  std::string to_iso() const;
  friend auto operator<=>(const Date&, const Date&) = default;
};

struct IncidentRecord {
  std::string id;
  std::size_t stratum = 0;
  CapturePattern pattern;
  double mark = 0.0;      // y, persons
  double log_mark = 0.0;  // ln y
  std::optional<Date> date;

  friend bool operator==(const IncidentRecord&, const IncidentRecord&) = default;
};

/// Immutable collection of observed incidents.
class Dataset {
 public:
  Dataset() = default;
  /// Validates every record and recomputes log_mark from mark.
  Dataset(std::vector<IncidentRecord> records, std::vector<std::string> list_names,
          std::vector<std::string> stratum_labels);

  const std::vector<IncidentRecord>& records() const noexcept { return records_; }
  const IncidentRecord& operator[](std::size_t i) const { return records_[i]; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }

  std::size_t num_lists() const noexcept { return list_names_.size(); }
  std::size_t num_strata() const noexcept { return stratum_labels_.size(); }
  const std::vector<std::string>& list_names() const noexcept { return list_names_; }
  const std::vector<std::string>& stratum_labels() const noexcept { return stratum_labels_; }

  /// m_g
  const std::vector<std::int64_t>& stratum_counts() const noexcept { return stratum_counts_; }
  /// Σ y_i over the observed incidents of each stratum.
  const std::vector<double>& stratum_mark_sums() const noexcept { return stratum_mark_sums_; }
  double total_mark() const noexcept;

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  std::vector<IncidentRecord> records_;
  std::vector<std::string> list_names_;
  std::vector<std::string> stratum_labels_;
  std::vector<std::int64_t> stratum_counts_;
  std::vector<double> stratum_mark_sums_;
};

/// Column mapping for incident CSV files.
struct CsvSchema {
  std::string id_column = "id";
  std::string date_column = "date";      // optional in the file
  std::string stratum_column = "stratum";  // optional in the file
  std::string mark_column = "y";
  /// List indicator columns in order. Empty: every column not named above.
  std::vector<std::string> list_columns;
  /// Explicit stratum ordering. Empty: order of first appearance.
  std::vector<std::string> stratum_order;
  /// Abort on the first rejected row instead of collecting it.
  bool strict = false;
};

struct RowError {
  std::size_t line = 0;
  std::string message;
};

struct ParseResult {
  Dataset dataset;
  std::vector<RowError> rejected;
  /// Valid but suspicious: no incidents survived ingestion.
  bool flagged_empty() const noexcept { return dataset.empty(); }
};

ParseResult parse_incident_csv(std::istream& in, const CsvSchema& schema = {});
ParseResult read_incident_csv(const std::filesystem::path& path, const CsvSchema& schema = {});

/// Writes `id,date,stratum,y,<lists>` with marks at full precision.
void write_incident_csv(std::ostream& out, const Dataset& data);

/// Counts of each observed capture pattern. The all-zero pattern never appears.
struct PatternTable {
  std::size_t num_lists = 0;
  std::map<std::uint32_t, std::int64_t> counts;

  std::int64_t total() const noexcept;
  std::int64_t count(const std::string& pattern) const;
  /// Patterns ordered by number of lists, then with list 1 captured first.
  std::vector<std::pair<CapturePattern, std::int64_t>> ordered_rows() const;
};

PatternTable pattern_table(const Dataset& data);
void write_pattern_table_csv(std::ostream& out, const PatternTable& table,
                             const std::vector<std::string>& list_names);

/// Merges lists: the new bit for a group is the OR of its members' bits.
/// `groups` must partition {0..R-1}.
Dataset collapse_lists(const Dataset& data, const std::vector<std::vector<std::size_t>>& groups);

/// Parses "1+3,2,4" (1-based) into zero-based groups.
std::vector<std::vector<std::size_t>> parse_list_groups(const std::string& text);

enum class StratifyScheme { single, by_year, by_month };

StratifyScheme parse_stratify_scheme(const std::string& text);

/// Reassigns strata from record dates. by_month always yields 12 strata,
/// pooling the same month across years; by_year yields the years present.
Dataset stratify(const Dataset& data, StratifyScheme scheme);

}  // namespace msemark
