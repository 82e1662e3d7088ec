#pragma once

// Commit-aggregate dataset: CSV ingestion, log transforms, indexing, summaries.
//
// One row per (project, language). The four predictors (commits, insertions,
// age in days, devs) enter the models as natural logarithms. Languages and
// projects are indexed densely in order of first appearance in the file.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bayeswork/csv.hpp"
#include "bayeswork/math.hpp"

namespace bayeswork {

inline constexpr int kNumPredictors = 4;
inline constexpr std::array<const char*, kNumPredictors> kPredictorNames = {"commits", "insertions",
                                                                           "age", "devs"};
inline constexpr std::array<const char*, 7> kCsvColumns = {
    "project", "language", "commits", "insertions", "age", "devs", "bugs"};

/// Input problem (malformed file, invalid value); carries the offending line when known.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? what + " at line " + std::to_string(line) : what), line_(line) {}
  [[nodiscard]] std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct RawRecord {
  std::string project;
  std::string language;
  std::int64_t commits = 0;
  std::int64_t insertions = 0;
  double age = 0.0;  // days since the oldest commit
  std::int64_t devs = 0;
  std::int64_t bugs = 0;

  bool operator==(const RawRecord&) const = default;
};

namespace detail {

inline std::int64_t parse_count(const std::string& cell, const char* column, std::size_t line) {
  std::int64_t v = 0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last || cell.empty()) {
    // Accept integral values written in floating-point form ("12.0", "1e3").
    char* end = nullptr;
    const double d = std::strtod(cell.c_str(), &end);
    if (cell.empty() || end != cell.c_str() + cell.size() || !std::isfinite(d) ||
        d != std::floor(d)) {
      throw DataError(std::string("non-numeric value '") + cell + "' in column " + column, line);
    }
    v = static_cast<std::int64_t>(d);
  }
  if (v < 0) throw DataError(std::string("negative count in column ") + column, line);
  return v;
}

inline double parse_real(const std::string& cell, const char* column, std::size_t line) {
  char* end = nullptr;
  const double d = std::strtod(cell.c_str(), &end);
  if (cell.empty() || end != cell.c_str() + cell.size())
    throw DataError(std::string("non-numeric value '") + cell + "' in column " + column, line);
  if (!std::isfinite(d)) throw DataError(std::string("non-finite value in column ") + column, line);
  if (d < 0) throw DataError(std::string("negative value in column ") + column, line);
  return d;
}

}  // namespace detail

/// Parses the seven-column dataset; column order is free, extra columns are rejected.
inline std::vector<RawRecord> parse_csv(std::istream& in) {
  csv::Reader reader(in);
  std::optional<csv::Record> header;
  try {
    header = reader.next();
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
  if (!header) throw DataError("empty file: missing header row");
  if (!header->fields.empty() && header->fields[0].rfind("\xEF\xBB\xBF", 0) == 0)
    header->fields[0].erase(0, 3);

  std::array<int, kCsvColumns.size()> column_of{};
  column_of.fill(-1);
  for (std::size_t i = 0; i < header->fields.size(); ++i) {
    const auto& name = header->fields[i];
    auto it = std::find(kCsvColumns.begin(), kCsvColumns.end(), name);
    if (it == kCsvColumns.end()) throw DataError("unexpected column '" + name + "'", 1);
    auto& slot = column_of[static_cast<std::size_t>(it - kCsvColumns.begin())];
    if (slot != -1) throw DataError("duplicate column '" + name + "'", 1);
    slot = static_cast<int>(i);
  }
  for (std::size_t c = 0; c < kCsvColumns.size(); ++c) {
    if (column_of[c] == -1) throw DataError(std::string("missing column ") + kCsvColumns[c], 1);
  }

  std::vector<RawRecord> out;
  while (true) {
    std::optional<csv::Record> rec;
    try {
      rec = reader.next();
    } catch (const std::runtime_error& e) {
      throw DataError(e.what());
    }
    if (!rec) break;
    if (rec->fields.size() == 1 && rec->fields[0].empty()) continue;  // blank line
    const std::size_t line = rec->line;
    if (rec->fields.size() != header->fields.size()) {
      throw DataError("expected " + std::to_string(header->fields.size()) + " fields, found " +
                          std::to_string(rec->fields.size()),
                      line);
    }
    auto cell = [&](std::size_t c) -> const std::string& {
      return rec->fields[static_cast<std::size_t>(column_of[c])];
    };
    RawRecord r;
    r.project = cell(0);
    r.language = cell(1);
    if (r.project.empty()) throw DataError("empty project label", line);
    if (r.language.empty()) throw DataError("empty language label", line);
    r.commits = detail::parse_count(cell(2), "commits", line);
    r.insertions = detail::parse_count(cell(3), "insertions", line);
    r.age = detail::parse_real(cell(4), "age", line);
    r.devs = detail::parse_count(cell(5), "devs", line);
    r.bugs = detail::parse_count(cell(6), "bugs", line);
    if (r.bugs > r.commits) throw DataError("bugs exceed commits", line);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<RawRecord> load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset '" + path + "'");
  return parse_csv(in);
}

/// Inverse of parse_csv: header plus one line per record.
inline std::string records_csv(const std::vector<RawRecord>& records) {
  std::ostringstream out;
  csv::Writer w(out);
  w.row({kCsvColumns.begin(), kCsvColumns.end()});
  for (const auto& r : records)
    w.row({r.project, r.language, std::to_string(r.commits), std::to_string(r.insertions),
           csv::format_double(r.age), std::to_string(r.devs), std::to_string(r.bugs)});
  return out.str();
}

/// How nonpositive predictors are handled before the log transform.
enum class ZeroPolicy {
  Strict,  ///< reject (default)
  Offset,  ///< x -> ln(x + 0.5)
};

struct PrepareOptions {
  ZeroPolicy zero_policy = ZeroPolicy::Strict;
  bool center = false;  ///< subtract the mean of each log predictor
};

struct PreparedRow {
  int project_index = 0;
  int language_index = 0;
  std::array<double, kNumPredictors> x{};  // log predictors, possibly centered
  std::int64_t bugs = 0;
  double height = 0.0;  // continuous outcome, used only by the toy model
};

struct Dataset {
  std::vector<PreparedRow> rows;
  std::vector<std::string> language_names;
  std::vector<std::string> project_names;
  /// Value subtracted from each log predictor (zero unless centered).
  std::array<double, kNumPredictors> shift{};
  ZeroPolicy zero_policy = ZeroPolicy::Strict;

  [[nodiscard]] std::size_t size() const { return rows.size(); }
  [[nodiscard]] int n_languages() const { return static_cast<int>(language_names.size()); }
  [[nodiscard]] int n_projects() const { return static_cast<int>(project_names.size()); }

  [[nodiscard]] std::vector<double> outcomes() const {
    std::vector<double> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) y[i] = static_cast<double>(rows[i].bugs);
    return y;
  }

  [[nodiscard]] int language_index(const std::string& name) const {
    auto it = std::find(language_names.begin(), language_names.end(), name);
    if (it == language_names.end()) throw DataError("unknown language '" + name + "'");
    return static_cast<int>(it - language_names.begin());
  }

  /// Log-scale predictor as seen by the model for a natural-unit value.
  [[nodiscard]] double transform(int predictor, double natural) const {
    const double v = zero_policy == ZeroPolicy::Offset ? natural + 0.5 : natural;
    return std::log(v) - shift[static_cast<std::size_t>(predictor)];
  }
};

inline double log_transform(double value, ZeroPolicy policy, const char* column,
                            std::size_t record) {
  if (policy == ZeroPolicy::Offset) {
    if (value + 0.5 <= 0)
      throw DataError(std::string("negative predictor ") + column + " in record " +
                      std::to_string(record));
    return std::log(value + 0.5);
  }
  if (value <= 0) {
    throw DataError(std::string("nonpositive predictor ") + column + " in record " +
                    std::to_string(record) + " (use the log-offset policy to admit zeros)");
  }
  return std::log(value);
}

inline Dataset prepare(const std::vector<RawRecord>& records, const PrepareOptions& options = {}) {
  if (records.empty()) throw DataError("no records to prepare");
  Dataset ds;
  ds.zero_policy = options.zero_policy;
  std::unordered_map<std::string, int> lang_index;
  std::unordered_map<std::string, int> proj_index;
  std::set<std::pair<int, int>> seen;
  ds.rows.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const RawRecord& r = records[i];
    PreparedRow row;
    auto [lit, lnew] = lang_index.emplace(r.language, ds.n_languages());
    if (lnew) ds.language_names.push_back(r.language);
    auto [pit, pnew] = proj_index.emplace(r.project, ds.n_projects());
    if (pnew) ds.project_names.push_back(r.project);
    row.language_index = lit->second;
    row.project_index = pit->second;
    if (!seen.emplace(row.project_index, row.language_index).second) {
      throw DataError("duplicate (project, language) pair (" + r.project + ", " + r.language +
                      ") in record " + std::to_string(i + 1));
    }
    const std::array<double, kNumPredictors> raw = {static_cast<double>(r.commits),
                                                    static_cast<double>(r.insertions), r.age,
                                                    static_cast<double>(r.devs)};
    for (int k = 0; k < kNumPredictors; ++k)
      row.x[static_cast<std::size_t>(k)] =
          log_transform(raw[static_cast<std::size_t>(k)], options.zero_policy,
                        kPredictorNames[static_cast<std::size_t>(k)], i + 1);
    row.bugs = r.bugs;
    ds.rows.push_back(row);
  }
  if (options.center) {
    for (std::size_t k = 0; k < kNumPredictors; ++k) {
      double acc = 0.0;
      for (const auto& row : ds.rows) acc += row.x[k];
      ds.shift[k] = acc / static_cast<double>(ds.rows.size());
      for (auto& row : ds.rows) row.x[k] -= ds.shift[k];
    }
  }
  return ds;
}

/// Dataset for the toy height model: one row per measurement, no grouping.
inline Dataset make_toy_dataset(const std::vector<double>& heights) {
  Dataset ds;
  ds.language_names = {"all"};
  ds.project_names = {"all"};
  for (double h : heights) {
    PreparedRow row;
    row.height = h;
    ds.rows.push_back(row);
  }
  return ds;
}

inline constexpr std::array<double, 5> kSummaryProbabilities = {0.0, 0.25, 0.5, 0.75, 1.0};

struct DataSummary {
  std::size_t n_rows = 0;
  int n_languages = 0;
  int n_projects = 0;
  double bug_mean = 0.0;
  double bug_variance = 0.0;
  /// predictor -> quantiles at kSummaryProbabilities, on the uncentered log scale.
  std::array<std::array<double, kSummaryProbabilities.size()>, kNumPredictors> predictor_quantiles{};
  /// Sorted uncentered log values per predictor (kept for arbitrary-q scenarios).
  std::array<std::vector<double>, kNumPredictors> sorted_predictors;
  std::vector<std::string> language_names;
  std::vector<std::size_t> rows_per_language;
  /// rows -> number of projects with exactly that many rows.
  std::map<std::size_t, std::size_t> projects_by_row_count;
  ZeroPolicy zero_policy = ZeroPolicy::Strict;

  [[nodiscard]] double fraction_single_row_projects() const {
    auto it = projects_by_row_count.find(1);
    return it == projects_by_row_count.end() || n_projects == 0
               ? 0.0
               : static_cast<double>(it->second) / n_projects;
  }
};

inline DataSummary summarize(const Dataset& ds) {
  if (ds.rows.empty()) throw DataError("cannot summarize an empty dataset");
  DataSummary s;
  s.n_rows = ds.size();
  s.n_languages = ds.n_languages();
  s.n_projects = ds.n_projects();
  s.zero_policy = ds.zero_policy;
  const std::vector<double> bugs = ds.outcomes();
  s.bug_mean = mean(bugs);
  s.bug_variance = variance(bugs);
  for (std::size_t k = 0; k < kNumPredictors; ++k) {
    auto& col = s.sorted_predictors[k];
    col.reserve(ds.size());
    for (const auto& row : ds.rows) col.push_back(row.x[k] + ds.shift[k]);
    std::sort(col.begin(), col.end());
    for (std::size_t q = 0; q < kSummaryProbabilities.size(); ++q)
      s.predictor_quantiles[k][q] = quantile_sorted(col, kSummaryProbabilities[q]);
  }
  s.language_names = ds.language_names;
  s.rows_per_language.assign(static_cast<std::size_t>(ds.n_languages()), 0);
  std::vector<std::size_t> per_project(static_cast<std::size_t>(ds.n_projects()), 0);
  for (const auto& row : ds.rows) {
    ++s.rows_per_language[static_cast<std::size_t>(row.language_index)];
    ++per_project[static_cast<std::size_t>(row.project_index)];
  }
  for (std::size_t c : per_project) ++s.projects_by_row_count[c];
  return s;
}

/// Hypothetical project described in natural units.
struct Scenario {
  double commits = 1.0;
  double insertions = 1.0;
  double age = 1.0;  // days
  double devs = 1.0;
  std::optional<int> language;  // unset -> every language
  std::string label;

  [[nodiscard]] std::array<double, kNumPredictors> natural() const {
    return {commits, insertions, age, devs};
  }

  void validate() const {
    const auto v = natural();
    for (std::size_t k = 0; k < kNumPredictors; ++k) {
      if (!(v[k] > 0) || !std::isfinite(v[k]))
        throw DataError(std::string("scenario ") + kPredictorNames[k] + " must be positive");
    }
  }

  /// Model-scale predictors for this scenario under the dataset's transform.
  [[nodiscard]] std::array<double, kNumPredictors> log_predictors(const Dataset& ds) const {
    validate();
    std::array<double, kNumPredictors> x{};
    const auto v = natural();
    for (int k = 0; k < kNumPredictors; ++k)
      x[static_cast<std::size_t>(k)] = ds.transform(k, v[static_cast<std::size_t>(k)]);
    return x;
  }
};

/// Scenario whose predictors sit at the q-quantile (log scale) of each observed predictor.
inline Scenario quantile_scenario(const DataSummary& summary, double q) {
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile outside [0, 1]");
  std::array<double, kNumPredictors> v{};
  for (std::size_t k = 0; k < kNumPredictors; ++k) {
    const double log_value = quantile_sorted(summary.sorted_predictors[k], q);
    // Invert the transform so Scenario::log_predictors reproduces log_value exactly.
    v[k] = std::exp(log_value) - (summary.zero_policy == ZeroPolicy::Offset ? 0.5 : 0.0);
  }
  Scenario s;
  s.commits = v[0];
  s.insertions = v[1];
  s.age = v[2];
  s.devs = v[3];
  s.label = "q" + csv::format_double(q);
  return s;
}

}  // namespace bayeswork
