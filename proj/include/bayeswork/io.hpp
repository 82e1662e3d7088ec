#pragma once

// Serialization: JSON documents, CSV tables, dataset fingerprints and fit archives.
//
// Every file except metadata.json is a pure function of its inputs, so reruns with the
// same seed are byte-identical.

#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bayeswork/analyze.hpp"
#include "bayeswork/checks.hpp"
#include "bayeswork/compare.hpp"
#include "bayeswork/csv.hpp"
#include "bayeswork/data.hpp"
#include "bayeswork/diagnostics.hpp"
#include "bayeswork/model.hpp"
#include "bayeswork/sampler.hpp"

#ifndef BAYESWORK_VERSION
#define BAYESWORK_VERSION "0.0.0"
#endif

namespace bayeswork {

using Json = nlohmann::ordered_json;

inline constexpr const char* kToolVersion = BAYESWORK_VERSION;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Files ------------------------------------------------------------------------------

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes through a temporary file so readers never see a half-written file.
inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << content;
    if (!out) throw IoError("write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

// Hashing -----------------------------------------------------------------------------

inline std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw IoError("SHA-256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

/// Content hash of the prepared dataset: rows, labels and the predictor transform.
inline std::string dataset_fingerprint(const Dataset& ds) {
  std::ostringstream s;
  s << "bayeswork-dataset-v1\n" << (ds.zero_policy == ZeroPolicy::Offset ? "offset" : "strict") << '\n';
  for (double v : ds.shift) s << csv::format_double(v) << ',';
  s << '\n';
  for (const auto& n : ds.language_names) s << csv::escape(n) << '\n';
  s << "--\n";
  for (const auto& n : ds.project_names) s << csv::escape(n) << '\n';
  s << "--\n";
  for (const auto& r : ds.rows) {
    s << r.project_index << ',' << r.language_index << ',' << r.bugs << ',' << csv::format_double(r.height);
    for (double x : r.x) s << ',' << csv::format_double(x);
    s << '\n';
  }
  return sha256_hex(s.str());
}

// JSON: numbers ------------------------------------------------------------------------

/// Non-finite values become null (NaN) or a signed "inf" string.
inline Json number(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double number_from(const Json& j) {
  if (j.is_null()) return kNaN;
  if (j.is_string()) return j.get<std::string>() == "inf" ? kInf : -kInf;
  return j.get<double>();
}

// JSON: model and sampler ----------------------------------------------------------------

inline Json to_json(const PriorConfig& p) {
  return {{"intercept", {{"mean", p.intercept.mean}, {"sd", p.intercept.sd}}},
          {"slope", {{"mean", p.slope.mean}, {"sd", p.slope.sd}}},
          {"group_sd", {{"shape", p.group_sd.shape}, {"scale", p.group_sd.scale}}},
          {"dispersion", {{"shape", p.dispersion.shape}, {"rate", p.dispersion.rate}}},
          {"lkj_eta", p.lkj_eta},
          {"toy_mu", {{"mean", p.toy_mu.mean}, {"sd", p.toy_mu.sd}}},
          {"toy_sigma", {{"location", p.toy_sigma.location}, {"scale", p.toy_sigma.scale}}}};
}

inline PriorConfig prior_config_from_json(const Json& j) {
  PriorConfig p;
  auto pair = [&](const char* key, const char* a, const char* b, double& x, double& y) {
    if (!j.contains(key)) return;
    x = j.at(key).value(a, x);
    y = j.at(key).value(b, y);
  };
  pair("intercept", "mean", "sd", p.intercept.mean, p.intercept.sd);
  pair("slope", "mean", "sd", p.slope.mean, p.slope.sd);
  pair("group_sd", "shape", "scale", p.group_sd.shape, p.group_sd.scale);
  pair("dispersion", "shape", "rate", p.dispersion.shape, p.dispersion.rate);
  pair("toy_mu", "mean", "sd", p.toy_mu.mean, p.toy_mu.sd);
  pair("toy_sigma", "location", "scale", p.toy_sigma.location, p.toy_sigma.scale);
  p.lkj_eta = j.value("lkj_eta", p.lkj_eta);
  p.validate();
  return p;
}

inline Json to_json(const ModelSpec& s) {
  Json j = {{"variant", to_string(s.variant)},
            {"n_languages", s.n_languages},
            {"n_projects", s.n_projects},
            {"priors", to_json(s.priors)},
            {"toy_fixed_sigma", s.toy_fixed_sigma ? Json(*s.toy_fixed_sigma) : Json(nullptr)},
            {"language_names", s.language_names},
            {"project_names", s.project_names}};
  return j;
}

inline ModelSpec model_spec_from_json(const Json& j) {
  ModelSpec s;
  s.variant = parse_variant(j.at("variant").get<std::string>());
  s.n_languages = j.value("n_languages", 0);
  s.n_projects = j.value("n_projects", 0);
  if (j.contains("priors")) s.priors = prior_config_from_json(j.at("priors"));
  if (j.contains("toy_fixed_sigma") && !j.at("toy_fixed_sigma").is_null())
    s.toy_fixed_sigma = j.at("toy_fixed_sigma").get<double>();
  s.language_names = j.value("language_names", std::vector<std::string>{});
  s.project_names = j.value("project_names", std::vector<std::string>{});
  s.validate();
  return s;
}

inline Json to_json(const SamplerConfig& c) {
  return {{"n_chains", c.n_chains},
          {"n_warmup", c.n_warmup},
          {"n_draws", c.n_draws},
          {"target_accept", c.target_accept},
          {"max_tree_depth", c.max_tree_depth},
          {"seed", c.seed},
          {"init_radius", c.init_radius},
          {"fixed_step_size", c.fixed_step_size ? Json(*c.fixed_step_size) : Json(nullptr)}};
}

/// Reads the keys present in `j` over `base`; unknown keys are an error.
inline SamplerConfig sampler_config_from_json(const Json& j, SamplerConfig base = {}) {
  for (const auto& [key, value] : j.items()) {
    if (key == "n_chains") base.n_chains = value.get<int>();
    else if (key == "n_warmup") base.n_warmup = value.get<int>();
    else if (key == "n_draws") base.n_draws = value.get<int>();
    else if (key == "target_accept") base.target_accept = value.get<double>();
    else if (key == "max_tree_depth") base.max_tree_depth = value.get<int>();
    else if (key == "seed") base.seed = value.get<std::uint64_t>();
    else if (key == "init_radius") base.init_radius = value.get<double>();
    else if (key == "fixed_step_size") {
      if (value.is_null()) base.fixed_step_size.reset();
      else base.fixed_step_size = value.get<double>();
    } else if (key != "threads") {
      throw IoError("unknown sampler setting '" + key + "'");
    }
  }
  base.validate();
  return base;
}

// JSON: reports ---------------------------------------------------------------------------

inline Json to_json(const Diagnostics& d) {
  Json params = Json::array();
  for (const auto& p : d.parameters)
    params.push_back({{"name", p.name},
                      {"mean", number(p.mean)},
                      {"sd", number(p.sd)},
                      {"q05", number(p.q05)},
                      {"q50", number(p.q50)},
                      {"q95", number(p.q95)},
                      {"rhat", number(p.rhat)},
                      {"ess", number(p.ess)},
                      {"ess_ratio", number(p.ess_ratio)},
                      {"degenerate", p.degenerate}});
  Json chains = Json::array();
  for (const auto& c : d.chains)
    chains.push_back({{"step_size", number(c.step_size)},
                      {"mean_accept", number(c.mean_accept)},
                      {"divergences", c.divergences},
                      {"max_depth_hits", c.max_depth_hits},
                      {"energy_mean", number(c.energy_mean)},
                      {"energy_sd", number(c.energy_sd)},
                      {"ebfmi", number(c.ebfmi)}});
  return {{"verdict", d.pass ? "pass" : "fail"},
          {"reasons", d.reasons},
          {"warnings", d.warnings},
          {"total_draws", d.total_draws},
          {"divergences", d.divergences},
          {"max_rhat", number(d.max_rhat)},
          {"min_ess", number(d.min_ess)},
          {"min_ess_ratio", number(d.min_ess_ratio)},
          {"thresholds", {{"rhat_below", kRhatThreshold}, {"ess_ratio_at_least", kEssRatioThreshold}, {"divergences", 0}}},
          {"chains", chains},
          {"parameters", params}};
}

inline Json to_json(const DataSummary& s) {
  Json predictors = Json::object();
  for (std::size_t k = 0; k < kNumPredictors; ++k) {
    Json q = Json::object();
    for (std::size_t p = 0; p < kSummaryProbabilities.size(); ++p)
      q[csv::format_double(kSummaryProbabilities[p])] = s.predictor_quantiles[k][p];
    predictors[kPredictorNames[k]] = q;
  }
  Json per_language = Json::object();
  for (std::size_t l = 0; l < s.language_names.size(); ++l) per_language[s.language_names[l]] = s.rows_per_language[l];
  Json by_rows = Json::object();
  for (const auto& [rows, count] : s.projects_by_row_count) by_rows[std::to_string(rows)] = count;
  return {{"rows", s.n_rows},
          {"languages", s.n_languages},
          {"projects", s.n_projects},
          {"bug_mean", s.bug_mean},
          {"bug_variance", s.bug_variance},
          {"zero_policy", s.zero_policy == ZeroPolicy::Offset ? "offset" : "strict"},
          {"log_predictor_quantiles", predictors},
          {"rows_per_language", per_language},
          {"projects_by_row_count", by_rows},
          {"fraction_single_row_projects", s.fraction_single_row_projects()}};
}

inline Json to_json(const EnsembleSummary& s) {
  return {{"max", number(s.max)},
          {"pooled_q99", number(s.pooled_q99)},
          {"fraction_above_1e6", s.fraction_above_1e6},
          {"median_of_sim_means", number(s.median_of_sim_means)}};
}

inline Json to_json(const AdequacyReport& r) {
  Json stats = Json::array();
  for (const auto& c : r.statistics)
    stats.push_back({{"statistic", c.name},
                     {"observed", number(c.observed)},
                     {"tail_p", number(c.tail_p)},
                     {"sim_q05", number(c.sim_q05)},
                     {"sim_q50", number(c.sim_q50)},
                     {"sim_q95", number(c.sim_q95)}});
  return {{"verdict", r.pass ? "pass" : "fail"},
          {"reasons", r.reasons},
          {"scale", "log10(1 + count)"},
          {"alpha", kAdequacyAlpha},
          {"simulations", r.n_sims},
          {"statistics", stats}};
}

inline Json to_json(const SbcResult& r) {
  Json params = Json::array();
  for (std::size_t j = 0; j < r.names.size(); ++j)
    params.push_back({{"name", r.names[j]},
                      {"chi_square", number(r.chi_square[j])},
                      {"p_value", number(r.p_value[j])},
                      {"bins", r.bins[j]}});
  std::size_t failed = 0, divergent = 0;
  for (const auto& it : r.iterations) {
    failed += it.ok ? 0 : 1;
    divergent += it.ok && !it.diagnostics_pass ? 1 : 0;
  }
  const bool pass = r.n_ok() > 0 && r.min_p() > 0.01;
  return {{"verdict", pass ? "pass" : "fail"},
          {"p_threshold", 0.01},
          {"iterations", r.iterations.size()},
          {"successful", r.n_ok()},
          {"failed", failed},
          {"with_divergences", divergent},
          {"posterior_draws", r.n_posterior},
          {"bins", r.n_bins},
          {"min_p", number(r.min_p())},
          {"parameters", params}};
}

inline Json to_json(const LooResult& r) {
  Json k = Json::array();
  for (double v : r.pareto_k) k.push_back(number(v));
  return {{"elpd_loo", r.elpd_loo},
          {"se_elpd", r.se_elpd},
          {"p_loo", r.p_loo},
          {"n_high_k", r.n_high_k()},
          {"k_threshold", kParetoKThreshold},
          {"pointwise_elpd", r.pointwise},
          {"pareto_k", k},
          {"high_k", r.high_k}};
}

inline Json to_json(const WaicResult& w) {
  return {{"elpd_waic", w.elpd_waic}, {"se", w.se}, {"p_waic", w.p_waic}};
}

inline Json to_json(const ComparisonTable& t) {
  Json rows = Json::array();
  auto opt = [](const std::optional<double>& v) { return v ? number(*v) : Json(nullptr); };
  for (const auto& r : t.rows)
    rows.push_back({{"model", r.model},
                    {"rank", r.rank},
                    {"elpd_loo", r.elpd_loo},
                    {"se_elpd", r.se_elpd},
                    {"p_loo", r.p_loo},
                    {"n_high_k", r.n_high_k},
                    {"elpd_diff", opt(r.elpd_diff)},
                    {"se_diff", opt(r.se_diff)},
                    {"elpd_diff_best", opt(r.elpd_diff_best)},
                    {"se_diff_best", opt(r.se_diff_best)}});
  return {{"difference_to", "immediately better model"}, {"rows", rows}};
}

// CSV tables ------------------------------------------------------------------------------

namespace detail {

inline std::string table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream out;
  csv::Writer w(out);
  w.row(header);
  for (const auto& r : rows) w.row(r);
  return out.str();
}

inline std::string num(double v) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
  return csv::format_double(v);
}

inline double parse_num(const std::string& s) {
  if (s == "NA") return kNaN;
  if (s == "Inf") return kInf;
  if (s == "-Inf") return -kInf;
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw IoError("not a number: '" + s + "'");
  return v;
}

inline std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : ""; }

}  // namespace detail

inline const std::vector<std::string>& draws_stat_columns() {
  static const std::vector<std::string> cols = {"chain", "draw", "lp__", "accept_stat__", "stepsize__",
                                                "treedepth__", "n_leapfrog__", "divergent__", "energy__",
                                                "max_energy_error__"};
  return cols;
}

/// One row per (chain, draw): sampler statistics then unconstrained coordinates u[k].
inline std::string draws_csv(const Draws& d) {
  std::vector<std::string> header = draws_stat_columns();
  for (int k = 0; k < d.dim; ++k) header.push_back("u[" + std::to_string(k) + "]");
  std::vector<std::vector<std::string>> rows;
  rows.reserve(d.total());
  for (int c = 0; c < d.n_chains; ++c)
    for (int i = 0; i < d.n_draws; ++i) {
      const auto& s = d.stat(c, i);
      std::vector<std::string> r = {std::to_string(c + 1),    std::to_string(i + 1),         detail::num(s.lp),
                                    detail::num(s.accept_stat), detail::num(s.step_size),    std::to_string(s.tree_depth),
                                    std::to_string(s.n_leapfrog), s.divergent ? "1" : "0", detail::num(s.energy),
                                    detail::num(s.max_energy_error)};
      for (int k = 0; k < d.dim; ++k) r.push_back(detail::num(d.value(c, i, k)));
      rows.push_back(std::move(r));
    }
  return detail::table(header, rows);
}

inline Draws draws_from_csv(const std::string& text) {
  std::istringstream in(text);
  csv::Reader reader(in);
  const auto header = reader.next();
  const auto& stat_cols = draws_stat_columns();
  if (!header || header->fields.size() < stat_cols.size() ||
      !std::equal(stat_cols.begin(), stat_cols.end(), header->fields.begin()))
    throw IoError("draws table has an unexpected header");
  Draws d;
  d.dim = static_cast<int>(header->fields.size() - stat_cols.size());
  std::vector<int> chain_of;
  while (auto rec = reader.next()) {
    if (rec->fields.size() == 1 && rec->fields[0].empty()) continue;
    if (rec->fields.size() != header->fields.size())
      throw IoError("draws table row at line " + std::to_string(rec->line) + " has the wrong width");
    const auto& f = rec->fields;
    chain_of.push_back(std::stoi(f[0]));
    IterationStats s;
    s.lp = detail::parse_num(f[2]);
    s.accept_stat = detail::parse_num(f[3]);
    s.step_size = detail::parse_num(f[4]);
    s.tree_depth = std::stoi(f[5]);
    s.n_leapfrog = std::stoi(f[6]);
    s.divergent = f[7] == "1";
    s.energy = detail::parse_num(f[8]);
    s.max_energy_error = detail::parse_num(f[9]);
    d.stats.push_back(s);
    for (std::size_t k = stat_cols.size(); k < f.size(); ++k) d.values.push_back(detail::parse_num(f[k]));
  }
  if (chain_of.empty()) throw IoError("draws table is empty");
  d.n_chains = chain_of.back();
  if (d.stats.size() % static_cast<std::size_t>(d.n_chains) != 0) throw IoError("chains have unequal lengths");
  d.n_draws = static_cast<int>(d.stats.size() / static_cast<std::size_t>(d.n_chains));
  for (std::size_t r = 0; r < chain_of.size(); ++r)
    if (chain_of[r] != static_cast<int>(r / static_cast<std::size_t>(d.n_draws)) + 1)
      throw IoError("draws table is not ordered by chain");
  return d;
}

inline std::string diagnostics_csv(const Diagnostics& d) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& p : d.parameters)
    rows.push_back({p.name, detail::num(p.mean), detail::num(p.sd), detail::num(p.q05), detail::num(p.q50),
                    detail::num(p.q95), detail::num(p.rhat), detail::num(p.ess), detail::num(p.ess_ratio)});
  return detail::table({"parameter", "mean", "sd", "q05", "q50", "q95", "rhat", "ess", "ess_ratio"}, rows);
}

inline std::string summary_csv(const DataSummary& s) {
  std::vector<std::vector<std::string>> rows = {
      {"rows", "", detail::num(static_cast<double>(s.n_rows))},
      {"languages", "", detail::num(s.n_languages)},
      {"projects", "", detail::num(s.n_projects)},
      {"bug_mean", "", detail::num(s.bug_mean)},
      {"bug_variance", "", detail::num(s.bug_variance)},
      {"fraction_single_row_projects", "", detail::num(s.fraction_single_row_projects())}};
  for (std::size_t k = 0; k < kNumPredictors; ++k)
    for (std::size_t p = 0; p < kSummaryProbabilities.size(); ++p)
      rows.push_back({std::string("log_") + kPredictorNames[k], csv::format_double(kSummaryProbabilities[p]),
                      detail::num(s.predictor_quantiles[k][p])});
  return detail::table({"quantity", "probability", "value"}, rows);
}

/// Density curves: one row per grid point, columns observed (if any) then sim_1..sim_n.
inline std::string curves_csv(const DensityCurves& c) {
  std::vector<std::string> header = {"x"};
  const bool with_obs = !c.observed.empty();
  if (with_obs) header.push_back("observed");
  for (std::size_t s = 0; s < c.simulated.size(); ++s) header.push_back("sim_" + std::to_string(s + 1));
  std::vector<std::vector<std::string>> rows;
  for (std::size_t g = 0; g < c.grid.size(); ++g) {
    std::vector<std::string> r = {detail::num(c.grid[g])};
    if (with_obs) r.push_back(detail::num(c.observed[g]));
    for (const auto& s : c.simulated) r.push_back(detail::num(s[g]));
    rows.push_back(std::move(r));
  }
  return detail::table(header, rows);
}

inline DensityCurves curves_from_csv(const std::string& text) {
  std::istringstream in(text);
  csv::Reader reader(in);
  const auto header = reader.next();
  if (!header || header->fields.empty() || header->fields[0] != "x") throw IoError("curve table has an unexpected header");
  const bool with_obs = header->fields.size() > 1 && header->fields[1] == "observed";
  const std::size_t first_sim = with_obs ? 2 : 1;
  for (std::size_t k = first_sim; k < header->fields.size(); ++k)
    if (header->fields[k].rfind("sim_", 0) != 0) throw IoError("curve table has an unexpected column '" + header->fields[k] + "'");
  DensityCurves c;
  c.simulated.resize(header->fields.size() - first_sim);
  while (auto rec = reader.next()) {
    if (rec->fields.size() == 1 && rec->fields[0].empty()) continue;
    if (rec->fields.size() != header->fields.size()) throw IoError("curve table row has the wrong width");
    c.grid.push_back(detail::parse_num(rec->fields[0]));
    if (with_obs) c.observed.push_back(detail::parse_num(rec->fields[1]));
    for (std::size_t k = first_sim; k < rec->fields.size(); ++k)
      c.simulated[k - first_sim].push_back(detail::parse_num(rec->fields[k]));
  }
  return c;
}

inline std::string adequacy_csv(const AdequacyReport& r) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& c : r.statistics)
    rows.push_back({c.name, detail::num(c.observed), detail::num(c.tail_p), detail::num(c.sim_q05),
                    detail::num(c.sim_q50), detail::num(c.sim_q95), c.tail_p >= kAdequacyAlpha ? "pass" : "fail"});
  return detail::table({"statistic", "observed", "tail_p", "sim_q05", "sim_q50", "sim_q95", "verdict"}, rows);
}

inline std::string sbc_ranks_csv(const SbcResult& r) {
  std::vector<std::string> header = {"iteration"};
  header.insert(header.end(), r.names.begin(), r.names.end());
  std::vector<std::vector<std::string>> rows;
  for (std::size_t it = 0; it < r.n_ok(); ++it) {
    std::vector<std::string> row = {std::to_string(it + 1)};
    for (const auto& ranks : r.ranks) row.push_back(std::to_string(ranks[it]));
    rows.push_back(std::move(row));
  }
  return detail::table(header, rows);
}

inline std::string comparison_csv(const ComparisonTable& t) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : t.rows)
    rows.push_back({r.model, std::to_string(r.rank), detail::opt_num(r.elpd_diff), detail::opt_num(r.se_diff),
                    detail::num(r.elpd_loo), detail::num(r.se_elpd), detail::num(r.p_loo), std::to_string(r.n_high_k),
                    detail::opt_num(r.elpd_diff_best), detail::opt_num(r.se_diff_best)});
  return detail::table({"model", "rank", "difference", "standard_error", "elpd_loo", "se_elpd", "p_loo", "n_high_k",
                        "difference_to_best", "standard_error_to_best"},
                       rows);
}

inline std::string ranking_csv(const Ranking& r, const std::string& scenario) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& row : r.rows)
    rows.push_back({scenario, std::to_string(row.rank), row.language, detail::num(row.median), detail::num(row.mean),
                    detail::num(row.q025), detail::num(row.q975)});
  return detail::table({"scenario", "rank", "language", "median", "mean", "q025", "q975"}, rows);
}

/// Violin geometry: quantiles at 1%..99% of each language's counts, in ranking order.
inline std::string violin_csv(const LanguagePrediction& pred, const Ranking& order) {
  std::vector<std::string> header = {"language"};
  for (int q = 1; q <= 99; ++q) header.push_back("q" + std::to_string(q));
  std::vector<std::vector<std::string>> rows;
  for (const auto& row : order.rows) {
    const auto it = std::find(pred.languages.begin(), pred.languages.end(), row.language);
    std::vector<double> v = pred.counts[static_cast<std::size_t>(it - pred.languages.begin())];
    std::sort(v.begin(), v.end());
    std::vector<std::string> r = {row.language};
    for (int q = 1; q <= 99; ++q) r.push_back(detail::num(quantile_sorted(v, q / 100.0)));
    rows.push_back(std::move(r));
  }
  return detail::table(header, rows);
}

struct Violin {
  std::string label;
  std::vector<double> quantiles;  // 1%..99%
};

inline std::vector<Violin> violins_from_csv(const std::string& text) {
  std::istringstream in(text);
  csv::Reader reader(in);
  const auto header = reader.next();
  if (!header || header->fields.size() != 100 || header->fields[0] != "language")
    throw IoError("violin table has an unexpected header");
  std::vector<Violin> out;
  while (auto rec = reader.next()) {
    if (rec->fields.size() == 1 && rec->fields[0].empty()) continue;
    if (rec->fields.size() != 100) throw IoError("violin table row has the wrong width");
    Violin v{rec->fields[0], {}};
    for (std::size_t k = 1; k < 100; ++k) v.quantiles.push_back(detail::parse_num(rec->fields[k]));
    out.push_back(std::move(v));
  }
  return out;
}

struct IntervalRow {
  std::string label;
  double low = 0.0;
  double mid = 0.0;
  double high = 0.0;
};

inline std::string interval_csv(const std::vector<IntervalRow>& rows, double prob) {
  std::vector<std::vector<std::string>> out;
  for (const auto& r : rows)
    out.push_back({r.label, detail::num(r.low), detail::num(r.mid), detail::num(r.high), detail::num(prob)});
  return detail::table({"label", "low", "median", "high", "probability"}, out);
}

inline std::vector<IntervalRow> intervals_from_csv(const std::string& text) {
  std::istringstream in(text);
  csv::Reader reader(in);
  const auto header = reader.next();
  if (!header || header->fields.size() != 5 || header->fields[0] != "label")
    throw IoError("interval table has an unexpected header");
  std::vector<IntervalRow> out;
  while (auto rec = reader.next()) {
    if (rec->fields.size() == 1 && rec->fields[0].empty()) continue;
    if (rec->fields.size() != 5) throw IoError("interval table row has the wrong width");
    out.push_back({rec->fields[0], detail::parse_num(rec->fields[1]), detail::parse_num(rec->fields[2]),
                   detail::parse_num(rec->fields[3])});
  }
  return out;
}

inline std::string effect_curve_csv(const EffectCurve& c) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t g = 0; g < c.grid.size(); ++g)
    rows.push_back({detail::num(c.grid[g]), detail::num(c.mean[g]), detail::num(c.low[g]), detail::num(c.high[g])});
  return detail::table({c.predictor, "mean", "q025", "q975"}, rows);
}

inline std::string pairwise_csv(const PairwiseDiff& d) {
  std::vector<double> s = d.samples;
  std::sort(s.begin(), s.end());
  return detail::table({"language_1", "language_2", "samples", "prob_positive", "prob_negative", "mean", "q025", "q50",
                        "q975", "mode", "project_intercept"},
                       {{d.language_1, d.language_2, std::to_string(s.size()), detail::num(d.prob_positive),
                         detail::num(d.prob_negative), detail::num(mean(s)), detail::num(quantile_sorted(s, 0.025)),
                         detail::num(quantile_sorted(s, 0.5)), detail::num(quantile_sorted(s, 0.975)),
                         d.options.sample_counts ? "sampled" : "expected", d.options.reuse_project ? "fitted" : "fresh"}});
}

// Fit archives ------------------------------------------------------------------------------

/// A fit on disk: spec.json, draws.csv, diagnostics.json, archive.json, metadata.json.
struct FitArchive {
  ModelSpec spec;
  SamplerConfig sampler;
  Draws draws;
  Diagnostics diagnostics;
  std::string fingerprint;
  std::string version = kToolVersion;
  [[nodiscard]] bool pass() const { return diagnostics.pass; }
};

inline Json archive_manifest(const FitArchive& a) {
  Json inv = Json::array();
  for (const auto& m : a.draws.inv_metric) inv.push_back(m);
  return {{"format", "bayeswork-fit-v1"},
          {"tool_version", a.version},
          {"verdict", a.pass() ? "pass" : "fail"},
          {"reasons", a.diagnostics.reasons},
          {"dataset_fingerprint", a.fingerprint},
          {"model", to_string(a.spec.variant)},
          {"sampler", to_json(a.sampler)},
          {"n_chains", a.draws.n_chains},
          {"n_draws", a.draws.n_draws},
          {"dim", a.draws.dim},
          {"step_size", a.draws.step_size},
          {"inv_metric", inv}};
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Writes a new archive directory. An existing archive is never modified: it is an error
/// unless `replace` is set, in which case the old directory is removed first.
inline void save_archive(const std::filesystem::path& dir, const FitArchive& a, bool replace = false) {
  if (std::filesystem::exists(dir / "archive.json")) {
    if (!replace) throw IoError("archive already exists at " + dir.string() + " (use --force to replace it)");
    std::filesystem::remove_all(dir);
  }
  std::filesystem::create_directories(dir);
  write_text_file(dir / "spec.json", dump(to_json(a.spec)));
  write_text_file(dir / "draws.csv", draws_csv(a.draws));
  write_text_file(dir / "diagnostics.json", dump(to_json(a.diagnostics)));
  write_text_file(dir / "diagnostics.csv", diagnostics_csv(a.diagnostics));
  Json meta = {{"created_utc", utc_timestamp()}, {"tool_version", a.version}, {"chain_wall_seconds", a.draws.wall_seconds}};
  write_text_file(dir / "metadata.json", dump(meta));
  write_text_file(dir / "archive.json", dump(archive_manifest(a)));  // last: marks the archive complete
}

inline FitArchive load_archive(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "archive.json")) throw IoError("no fit archive at " + dir.string());
  FitArchive a;
  Json manifest, spec;
  try {
    manifest = Json::parse(read_text_file(dir / "archive.json"));
    spec = Json::parse(read_text_file(dir / "spec.json"));
  } catch (const Json::exception& e) {
    throw IoError("corrupt archive at " + dir.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "bayeswork-fit-v1") throw IoError("unsupported archive format");
  a.spec = model_spec_from_json(spec);
  a.sampler = sampler_config_from_json(manifest.at("sampler"));
  a.fingerprint = manifest.at("dataset_fingerprint").get<std::string>();
  a.version = manifest.value("tool_version", "");
  a.draws = draws_from_csv(read_text_file(dir / "draws.csv"));
  if (a.draws.dim != dim(a.spec)) throw IoError("draws do not match the archived model");
  a.draws.step_size = manifest.at("step_size").get<std::vector<double>>();
  a.draws.inv_metric = manifest.at("inv_metric").get<std::vector<std::vector<double>>>();
  a.draws.spec = a.spec;
  a.diagnostics = diagnose(a.draws);
  return a;
}

/// Throws unless the archive was fitted to exactly this dataset.
inline void require_fingerprint(const FitArchive& a, const Dataset& ds) {
  const std::string fp = dataset_fingerprint(ds);
  if (fp != a.fingerprint)
    throw IoError("dataset fingerprint mismatch: archive " + a.fingerprint.substr(0, 12) + ", data " + fp.substr(0, 12));
}

}  // namespace bayeswork
