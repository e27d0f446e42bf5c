#include "msemark/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "msemark/csv.hpp"
#include "msemark/errors.hpp"

namespace msemark {

int CapturePattern::list_count() const noexcept { return std::popcount(bits); }

std::string CapturePattern::to_string(std::size_t num_lists) const {
  std::string out(num_lists, '0');
  for (std::size_t j = 0; j < num_lists; ++j)
    if (captured_by(j)) out[j] = '1';
  return out;
}

std::optional<Date> Date::parse_iso(const std::string& text) {
  // YYYY-MM-DD, optionally followed by a time part.
  if (text.size() < 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
  if (text.size() > 10 && text[10] != 'T' && text[10] != ' ') return std::nullopt;
  auto y = csv::parse_int(std::string_view(text).substr(0, 4));
  auto m = csv::parse_int(std::string_view(text).substr(5, 2));
  auto d = csv::parse_int(std::string_view(text).substr(8, 2));
  if (!y || !m || !d) return std::nullopt;
  if (*m < 1 || *m > 12 || *d < 1) return std::nullopt;
  static constexpr int kDays[] = {31, 29, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  int limit = kDays[*m - 1];
  if (*m == 2) {
    const bool leap = (*y % 4 == 0 && *y % 100 != 0) || *y % 400 == 0;
    limit = leap ? 29 : 28;
  }
  if (*d > limit) return std::nullopt;
  return Date{static_cast<int>(*y), static_cast<int>(*m), static_cast<int>(*d)};
}

std::string Date::to_iso() const {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", year, month, day);
  return buf;
}

Dataset::Dataset(std::vector<IncidentRecord> records, std::vector<std::string> list_names,
                 std::vector<std::string> stratum_labels)
    : records_(std::move(records)),
      list_names_(std::move(list_names)),
      stratum_labels_(std::move(stratum_labels)) {
  if (list_names_.empty() || list_names_.size() > kMaxLists)
    throw ConfigError("number of lists must be between 1 and " + std::to_string(kMaxLists));
  if (stratum_labels_.empty()) throw ConfigError("dataset needs at least one stratum");
  const std::uint32_t limit = 1U << list_names_.size();
  stratum_counts_.assign(stratum_labels_.size(), 0);
  stratum_mark_sums_.assign(stratum_labels_.size(), 0.0);
  for (auto& r : records_) {
    if (!(r.mark > 0.0) || !std::isfinite(r.mark))
      throw DataError("incident '" + r.id + "': mark must be positive and finite");
    if (r.pattern.empty())
      throw DataError("incident '" + r.id + "': all-zero capture pattern cannot be observed");
    if (r.pattern.bits >= limit)
      throw DataError("incident '" + r.id + "': capture pattern references a missing list");
    if (r.stratum >= stratum_labels_.size())
      throw DataError("incident '" + r.id + "': stratum index out of range");
    r.log_mark = std::log(r.mark);
    ++stratum_counts_[r.stratum];
    stratum_mark_sums_[r.stratum] += r.mark;
  }
}

double Dataset::total_mark() const noexcept {
  return std::accumulate(stratum_mark_sums_.begin(), stratum_mark_sums_.end(), 0.0);
}

namespace {

bool parse_indicator(const std::string& text, bool& value) {
  std::string_view t(text);
  while (!t.empty() && t.front() == ' ') t.remove_prefix(1);
  while (!t.empty() && t.back() == ' ') t.remove_suffix(1);
  if (t == "1") {
    value = true;
    return true;
  }
  if (t == "0") {
    value = false;
    return true;
  }
  return false;
}

}  // namespace

ParseResult parse_incident_csv(std::istream& in, const CsvSchema& schema) {
  csv::Reader reader(in);
  auto header_row = reader.next();
  if (!header_row) throw ConfigError("incident CSV has no header row");
  const auto& header = header_row->fields;

  auto require = [&](const std::string& name) {
    auto idx = csv::find_column(header, name);
    if (!idx) throw ConfigError("incident CSV is missing required column '" + name + "'");
    return *idx;
  };
  const std::size_t id_col = require(schema.id_column);
  const std::size_t mark_col = require(schema.mark_column);
  const auto date_col = csv::find_column(header, schema.date_column);
  const auto stratum_col = csv::find_column(header, schema.stratum_column);

  std::vector<std::size_t> list_cols;
  std::vector<std::string> list_names;
  if (!schema.list_columns.empty()) {
    for (const auto& name : schema.list_columns) {
      list_cols.push_back(require(name));
      list_names.push_back(name);
    }
  } else {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c == id_col || c == mark_col || (date_col && c == *date_col) ||
          (stratum_col && c == *stratum_col))
        continue;
      list_cols.push_back(c);
      list_names.push_back(header[c]);
    }
  }
  if (list_cols.empty()) throw ConfigError("incident CSV has no list indicator columns");
  if (list_cols.size() > kMaxLists)
    throw ConfigError("at most " + std::to_string(kMaxLists) + " lists are supported");

  std::vector<std::string> labels = schema.stratum_order;
  const bool explicit_order = !labels.empty();
  auto stratum_index = [&](const std::string& label) -> std::optional<std::size_t> {
    auto it = std::find(labels.begin(), labels.end(), label);
    if (it != labels.end()) return static_cast<std::size_t>(it - labels.begin());
    if (explicit_order) return std::nullopt;
    labels.push_back(label);
    return labels.size() - 1;
  };

  ParseResult result;
  std::vector<IncidentRecord> records;
  auto reject = [&](std::size_t line, std::string message) {
    if (schema.strict) throw DataError(message, line);
    result.rejected.push_back({line, std::move(message)});
  };

  while (auto row = reader.next()) {
    const auto& f = row->fields;
    if (f.size() != header.size()) {
      reject(row->line, "expected " + std::to_string(header.size()) + " fields, found " +
                            std::to_string(f.size()));
      continue;
    }
    IncidentRecord rec;
    rec.id = f[id_col];
    auto mark = csv::parse_double(f[mark_col]);
    if (!mark || !std::isfinite(*mark)) {
      reject(row->line, "mark '" + f[mark_col] + "' is not a number");
      continue;
    }
    if (*mark <= 0.0) {
      reject(row->line, "mark must be positive, got '" + f[mark_col] + "'");
      continue;
    }
    rec.mark = *mark;
    rec.log_mark = std::log(*mark);

    bool ok = true;
    for (std::size_t j = 0; j < list_cols.size(); ++j) {
      bool bit = false;
      if (!parse_indicator(f[list_cols[j]], bit)) {
        reject(row->line, "list column '" + list_names[j] + "' must be 0 or 1, got '" +
                              f[list_cols[j]] + "'");
        ok = false;
        break;
      }
      if (bit) rec.pattern.bits |= 1U << j;
    }
    if (!ok) continue;
    if (rec.pattern.empty()) {
      reject(row->line, "all-zero capture pattern violates zero-truncation");
      continue;
    }

    if (date_col && !f[*date_col].empty()) {
      rec.date = Date::parse_iso(f[*date_col]);
      if (!rec.date) {
        reject(row->line, "unparseable date '" + f[*date_col] + "'");
        continue;
      }
    }

    const std::string label = stratum_col ? f[*stratum_col] : std::string("all");
    auto idx = stratum_index(label);
    if (!idx) {
      reject(row->line, "stratum '" + label + "' is not in the supplied ordering");
      continue;
    }
    rec.stratum = *idx;
    records.push_back(std::move(rec));
  }
  if (labels.empty()) labels.push_back("all");
  result.dataset = Dataset(std::move(records), std::move(list_names), std::move(labels));
  return result;
}

ParseResult read_incident_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open incident file '" + path.string() + "'");
  return parse_incident_csv(in, schema);
}

void write_incident_csv(std::ostream& out, const Dataset& data) {
  std::vector<std::string> header{"id", "date", "stratum", "y"};
  header.insert(header.end(), data.list_names().begin(), data.list_names().end());
  csv::write_row(out, header);
  for (const auto& r : data.records()) {
    std::vector<std::string> row{r.id, r.date ? r.date->to_iso() : std::string(),
                                 data.stratum_labels()[r.stratum], csv::format_exact(r.mark)};
    for (std::size_t j = 0; j < data.num_lists(); ++j) row.push_back(r.pattern.captured_by(j) ? "1" : "0");
    csv::write_row(out, row);
  }
}

std::int64_t PatternTable::total() const noexcept {
  std::int64_t sum = 0;
  for (const auto& [bits, n] : counts) sum += n;
  return sum;
}

std::int64_t PatternTable::count(const std::string& pattern) const {
  if (pattern.size() != num_lists) throw ConfigError("pattern '" + pattern + "' has the wrong length");
  std::uint32_t bits = 0;
  for (std::size_t j = 0; j < pattern.size(); ++j) {
    if (pattern[j] == '1')
      bits |= 1U << j;
    else if (pattern[j] != '0')
      throw ConfigError("pattern '" + pattern + "' must contain only 0 and 1");
  }
  auto it = counts.find(bits);
  return it == counts.end() ? 0 : it->second;
}

std::vector<std::pair<CapturePattern, std::int64_t>> PatternTable::ordered_rows() const {
  std::vector<std::pair<CapturePattern, std::int64_t>> rows;
  for (const auto& [bits, n] : counts) rows.push_back({CapturePattern{bits}, n});
  const std::size_t r = num_lists;
  std::sort(rows.begin(), rows.end(), [r](const auto& a, const auto& b) {
    const int ca = a.first.list_count(), cb = b.first.list_count();
    if (ca != cb) return ca < cb;
    return a.first.to_string(r) > b.first.to_string(r);
  });
  return rows;
}

PatternTable pattern_table(const Dataset& data) {
  PatternTable table;
  table.num_lists = data.num_lists();
  for (const auto& r : data.records()) ++table.counts[r.pattern.bits];
  return table;
}

void write_pattern_table_csv(std::ostream& out, const PatternTable& table,
                             const std::vector<std::string>& list_names) {
  std::vector<std::string> header = list_names;
  header.push_back("count");
  csv::write_row(out, header);
  for (const auto& [pattern, n] : table.ordered_rows()) {
    std::vector<std::string> row;
    for (std::size_t j = 0; j < table.num_lists; ++j) row.push_back(pattern.captured_by(j) ? "1" : "0");
    row.push_back(std::to_string(n));
    csv::write_row(out, row);
  }
}

Dataset collapse_lists(const Dataset& data, const std::vector<std::vector<std::size_t>>& groups) {
  const std::size_t r = data.num_lists();
  std::vector<int> seen(r, 0);
  for (const auto& group : groups) {
    if (group.empty()) throw ConfigError("list partition contains an empty group");
    for (std::size_t j : group) {
      if (j >= r) throw ConfigError("list partition references list " + std::to_string(j + 1) +
                                    " but the data has " + std::to_string(r));
      ++seen[j];
    }
  }
  for (std::size_t j = 0; j < r; ++j)
    if (seen[j] != 1)
      throw ConfigError("list " + std::to_string(j + 1) + " appears " + std::to_string(seen[j]) +
                        " times in the partition");

  std::vector<std::string> names;
  for (const auto& group : groups) {
    std::string name;
    for (std::size_t j : group) {
      if (!name.empty()) name += "+";
      name += data.list_names()[j];
    }
    names.push_back(name);
  }
  std::vector<IncidentRecord> records = data.records();
  for (auto& rec : records) {
    CapturePattern merged;
    for (std::size_t g = 0; g < groups.size(); ++g)
      for (std::size_t j : groups[g])
        if (rec.pattern.captured_by(j)) merged.bits |= 1U << g;
    rec.pattern = merged;
  }
  return Dataset(std::move(records), std::move(names), data.stratum_labels());
}

std::vector<std::vector<std::size_t>> parse_list_groups(const std::string& text) {
  std::vector<std::vector<std::size_t>> groups;
  std::stringstream ss(text);
  std::string group;
  while (std::getline(ss, group, ',')) {
    std::vector<std::size_t> members;
    std::stringstream gs(group);
    std::string item;
    while (std::getline(gs, item, '+')) {
      auto v = csv::parse_int(item);
      if (!v || *v < 1) throw ConfigError("bad list index '" + item + "' in '" + text + "'");
      members.push_back(static_cast<std::size_t>(*v - 1));
    }
    groups.push_back(std::move(members));
  }
  if (groups.empty()) throw ConfigError("empty list partition");
  return groups;
}

StratifyScheme parse_stratify_scheme(const std::string& text) {
  if (text == "single") return StratifyScheme::single;
  if (text == "year" || text == "by-year") return StratifyScheme::by_year;
  if (text == "month" || text == "by-month") return StratifyScheme::by_month;
  throw ConfigError("unknown stratification '" + text + "' (expected single, year or month)");
}

Dataset stratify(const Dataset& data, StratifyScheme scheme) {
  std::vector<IncidentRecord> records = data.records();
  if (scheme == StratifyScheme::single) {
    for (auto& r : records) r.stratum = 0;
    return Dataset(std::move(records), data.list_names(), {"all"});
  }
  for (const auto& r : records)
    if (!r.date) throw DataError("incident '" + r.id + "' has no date; cannot stratify by calendar");

  std::vector<std::string> labels;
  if (scheme == StratifyScheme::by_month) {
    labels = {"January", "February", "March",     "April",   "May",      "June",
              "July",    "August",   "September", "October", "November", "December"};
    for (auto& r : records) r.stratum = static_cast<std::size_t>(r.date->month - 1);
  } else {
    std::set<int> years;
    for (const auto& r : records) years.insert(r.date->year);
    std::vector<int> ordered(years.begin(), years.end());
    for (int y : ordered) labels.push_back(std::to_string(y));
    for (auto& r : records)
      r.stratum = static_cast<std::size_t>(
          std::lower_bound(ordered.begin(), ordered.end(), r.date->year) - ordered.begin());
    if (labels.empty()) labels.push_back("all");
  }
  return Dataset(std::move(records), data.list_names(), std::move(labels));
}

}  // namespace msemark
