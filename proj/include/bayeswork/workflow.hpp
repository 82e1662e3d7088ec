#pragma once

// Subcommand implementations behind the command-line tool. Each cmd_* function reads a
// RunConfig, writes its files under the output directory and returns an exit code.

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "bayeswork/analyze.hpp"
#include "bayeswork/checks.hpp"
#include "bayeswork/compare.hpp"
#include "bayeswork/data.hpp"
#include "bayeswork/diagnostics.hpp"
#include "bayeswork/io.hpp"
#include "bayeswork/model.hpp"
#include "bayeswork/sampler.hpp"
#include "bayeswork/svg.hpp"

namespace bayeswork {

inline constexpr int kExitOk = 0;
inline constexpr int kExitVerdict = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitUsage = 3;

inline constexpr const char* kOutputDirEnv = "BAYESWORK_OUTPUT_DIR";

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Archive-dependent commands stop with this when the fit failed its diagnostics.
class VerdictError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string data_path;
  std::vector<Variant> models = {Variant::M1, Variant::M2, Variant::M3};
  SamplerConfig sampler;
  PriorConfig priors;
  std::filesystem::path output_dir = "bayeswork-out";
  PrepareOptions prepare;
  PairwiseOptions pairwise;
  int prior_sims = 100;
  int posterior_sims = 100;
  bool run_sbc = false;
  SbcConfig sbc;
  int sbc_rows = 10;  // design size for the toy model
  bool force = false;

  [[nodiscard]] std::uint64_t seed() const { return sampler.seed; }
  [[nodiscard]] int threads() const { return sampler.threads; }
};

inline std::vector<Variant> parse_models(const std::string& list) {
  std::vector<Variant> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(parse_variant(item));
    } catch (const std::exception&) {
      throw UsageError("unknown model '" + item + "' (expected toy, M1, M2 or M3)");
    }
  }
  if (out.empty()) throw UsageError("no models given");
  return out;
}

/// Applies a JSON config document on top of `base`. Unknown keys are a usage error.
inline RunConfig run_config_from_json(const Json& j, RunConfig base = {}) {
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "data") base.data_path = value.get<std::string>();
      else if (key == "models") {
        std::string joined;
        for (const auto& m : value) joined += m.get<std::string>() + ",";
        base.models = parse_models(joined);
      } else if (key == "sampler") base.sampler = sampler_config_from_json(value, base.sampler);
      else if (key == "seed") base.sampler.seed = value.get<std::uint64_t>();
      else if (key == "threads") base.sampler.threads = value.get<int>();
      else if (key == "priors") base.priors = prior_config_from_json(value);
      else if (key == "output_dir") base.output_dir = value.get<std::string>();
      else if (key == "log_offset") base.prepare.zero_policy = value.get<bool>() ? ZeroPolicy::Offset : ZeroPolicy::Strict;
      else if (key == "center") base.prepare.center = value.get<bool>();
      else if (key == "pairwise_sample_counts") base.pairwise.sample_counts = value.get<bool>();
      else if (key == "reuse_project") base.pairwise.reuse_project = value.get<bool>();
      else if (key == "prior_sims") base.prior_sims = value.get<int>();
      else if (key == "posterior_sims") base.posterior_sims = value.get<int>();
      else if (key == "sbc") {
        base.run_sbc = true;
        for (const auto& [k, v] : value.items()) {
          if (k == "iterations") base.sbc.n_iterations = v.get<int>();
          else if (k == "posterior_draws") base.sbc.n_posterior = v.get<int>();
          else if (k == "thin") base.sbc.thin = v.get<int>();
          else if (k == "bins") base.sbc.n_bins = v.get<int>();
          else if (k == "warmup") base.sbc.sampler.n_warmup = v.get<int>();
          else if (k == "enabled") base.run_sbc = v.get<bool>();
          else throw UsageError("unknown sbc setting '" + k + "'");
        }
      } else throw UsageError("unknown config key '" + key + "'");
    }
  } catch (const IoError& e) {
    throw UsageError(std::string("config: ") + e.what());
  } catch (const Json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  return base;
}

inline RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {}) {
  Json j;
  try {
    j = Json::parse(read_text_file(path));
  } catch (const Json::exception& e) {
    throw IoError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j, std::move(base));
}

/// The output-directory override from the environment, if set.
inline std::optional<std::string> output_dir_from_env() {
  const char* v = std::getenv(kOutputDirEnv);
  if (v && *v) return std::string(v);
  return std::nullopt;
}

inline Dataset load_dataset(const RunConfig& cfg) {
  if (cfg.data_path.empty()) throw UsageError("a dataset is required (--data)");
  return prepare(load_csv(cfg.data_path), cfg.prepare);
}

inline ModelSpec spec_for(Variant v, const Dataset& ds, const RunConfig& cfg) {
  ModelSpec s = ModelSpec::for_dataset(v, ds);
  s.priors = cfg.priors;
  s.validate();
  return s;
}

inline std::string model_dir_name(Variant v) { return to_string(v); }

namespace detail {

/// Stream key per (stage, model) so stages never share random numbers.
inline Rng stage_rng(const RunConfig& cfg, std::uint64_t stage, Variant v) {
  return Rng(cfg.seed(), stage, static_cast<std::uint64_t>(v));
}

inline void log_line(std::ostream& log, const std::string& s) { log << s << '\n'; }

inline std::string fixed(double v, int digits) { return std::isfinite(v) ? csv::format_fixed(v, digits) : detail::num(v); }

}  // namespace detail

// summary ------------------------------------------------------------------------------------

inline int cmd_summary(const RunConfig& cfg, std::ostream& log) {
  const Dataset ds = load_dataset(cfg);
  const DataSummary s = summarize(ds);
  const auto dir = cfg.output_dir / "summary";
  write_text_file(dir / "summary.json", dump(to_json(s)));
  write_text_file(dir / "summary.csv", summary_csv(s));
  log << "rows " << s.n_rows << ", languages " << s.n_languages << ", projects " << s.n_projects << '\n'
      << "bugs: mean " << detail::fixed(s.bug_mean, 3) << ", variance " << detail::fixed(s.bug_variance, 1) << '\n'
      << "single-row projects: " << detail::fixed(100.0 * s.fraction_single_row_projects(), 1) << "%\n"
      << "wrote " << dir.string() << '\n';
  return kExitOk;
}

// prior-check --------------------------------------------------------------------------------

struct PriorCheckResult {
  Variant model;
  EnsembleSummary summary;
};

inline PriorCheckResult prior_check_model(const RunConfig& cfg, Variant v, const Dataset& ds,
                                          const std::filesystem::path& dir) {
  const ModelSpec spec = spec_for(v, ds, cfg);
  Rng rng = detail::stage_rng(cfg, 1, v);
  PredictiveEnsemble ens = prior_predictive(rng, spec, ds.rows, cfg.prior_sims);
  ens.observed = ds.outcomes();
  const EnsembleSummary s = summarize_ensemble(ens);
  const DensityCurves curves = density_curves(ens);
  write_text_file(dir / "prior_predictive.json",
                  dump(Json{{"model", to_string(v)}, {"simulations", cfg.prior_sims}, {"summary", to_json(s)}}));
  write_text_file(dir / "prior_curves.csv", curves_csv(curves));
  write_text_file(dir / "prior_density.svg", svg::density_overlay(curves, to_string(v) + " prior predictive"));
  return {v, s};
}

inline int cmd_prior_check(const RunConfig& cfg, std::ostream& log) {
  const Dataset ds = load_dataset(cfg);
  for (Variant v : cfg.models) {
    if (v == Variant::Toy) throw UsageError("prior-check works on the regression models");
    const auto r = prior_check_model(cfg, v, ds, cfg.output_dir / "prior_check" / model_dir_name(v));
    log << to_string(v) << ": max simulated " << detail::fixed(r.summary.max, 0) << ", pooled 99% "
        << detail::fixed(r.summary.pooled_q99, 1) << ", share above 1e6 " << detail::fixed(r.summary.fraction_above_1e6, 4)
        << '\n';
  }
  return kExitOk;
}

// fit / diagnose ------------------------------------------------------------------------------

inline FitArchive fit_model(const RunConfig& cfg, Variant v, const Dataset& ds) {
  const ModelSpec spec = spec_for(v, ds, cfg);
  FitArchive a;
  a.spec = spec;
  a.sampler = cfg.sampler;
  a.draws = fit(spec, ds, cfg.sampler);
  a.diagnostics = diagnose(a.draws);
  a.fingerprint = dataset_fingerprint(ds);
  return a;
}

inline void report_diagnostics(std::ostream& log, const std::string& label, const Diagnostics& d) {
  log << label << ": " << (d.pass ? "pass" : "fail") << " (max rhat " << detail::fixed(d.max_rhat, 4)
      << ", min ess ratio " << detail::fixed(d.min_ess_ratio, 3) << ", divergences " << d.divergences << ")\n";
  for (const auto& r : d.reasons) log << "  " << r << '\n';
  for (const auto& w : d.warnings) log << "  warning: " << w << '\n';
}

inline std::filesystem::path fit_dir(const RunConfig& cfg, Variant v) { return cfg.output_dir / "fits" / model_dir_name(v); }

inline int cmd_fit(const RunConfig& cfg, std::ostream& log) {
  const Dataset ds = load_dataset(cfg);
  bool all_pass = true;
  for (Variant v : cfg.models) {
    if (v == Variant::Toy) throw UsageError("fit works on the regression models");
    const FitArchive a = fit_model(cfg, v, ds);
    save_archive(fit_dir(cfg, v), a, cfg.force);
    report_diagnostics(log, to_string(v), a.diagnostics);
    log << "  archive " << fit_dir(cfg, v).string() << '\n';
    all_pass = all_pass && a.pass();
  }
  return all_pass ? kExitOk : kExitVerdict;
}

/// Diagnostics report plus trace plots of lp__ and the worst-mixing parameter.
inline int cmd_diagnose(const std::filesystem::path& archive_dir, const RunConfig& cfg, std::ostream& log) {
  const FitArchive a = load_archive(archive_dir);
  const auto dir = cfg.output_dir / "diagnose" / model_dir_name(a.spec.variant);
  write_text_file(dir / "diagnostics.json", dump(to_json(a.diagnostics)));
  write_text_file(dir / "diagnostics.csv", diagnostics_csv(a.diagnostics));
  std::vector<std::vector<double>> lp(static_cast<std::size_t>(a.draws.n_chains));
  for (int c = 0; c < a.draws.n_chains; ++c)
    for (int i = 0; i < a.draws.n_draws; ++i) lp[c].push_back(a.draws.stat(c, i).lp);
  write_text_file(dir / "trace_lp.svg", svg::trace(lp, "lp__"));
  const NamedSamples ns = named_samples(a.draws);
  std::size_t worst = 0;
  double worst_rhat = -kInf;
  for (std::size_t j = 0; j < a.diagnostics.parameters.size(); ++j) {
    const double r = a.diagnostics.parameters[j].rhat;
    if (std::isfinite(r) && r > worst_rhat) {
      worst_rhat = r;
      worst = j;
    }
  }
  write_text_file(dir / "trace_worst.svg", svg::trace(ns.chains_of(worst), ns.names[worst]));
  report_diagnostics(log, to_string(a.spec.variant), a.diagnostics);
  return a.pass() ? kExitOk : kExitVerdict;
}

/// Loads an archive for analysis: the fingerprint must match and the fit must have passed.
inline FitArchive analysis_archive(const std::filesystem::path& dir, const Dataset& ds, bool force) {
  FitArchive a = load_archive(dir);
  require_fingerprint(a, ds);
  if (!a.pass() && !force)
    throw VerdictError("archive " + dir.string() + " failed its diagnostics; rerun the fit or pass --force");
  return a;
}

// posterior-check ------------------------------------------------------------------------------

inline AdequacyReport posterior_check_model(const RunConfig& cfg, const FitArchive& a, const Dataset& ds,
                                            const std::filesystem::path& dir) {
  Rng rng = detail::stage_rng(cfg, 2, a.spec.variant);
  const PredictiveEnsemble ens = posterior_predictive(rng, a.spec, a.draws, ds, cfg.posterior_sims);
  const AdequacyReport r = ppc_summary(ens);
  write_text_file(dir / "adequacy.json", dump(to_json(r)));
  write_text_file(dir / "adequacy.csv", adequacy_csv(r));
  write_text_file(dir / "posterior_curves.csv", curves_csv(r.curves));
  write_text_file(dir / "posterior_density.svg",
                  svg::density_overlay(r.curves, to_string(a.spec.variant) + " posterior predictive"));
  return r;
}

inline int cmd_posterior_check(const std::filesystem::path& archive_dir, const RunConfig& cfg, std::ostream& log) {
  const Dataset ds = load_dataset(cfg);
  const FitArchive a = analysis_archive(archive_dir, ds, cfg.force);
  const auto r = posterior_check_model(cfg, a, ds, cfg.output_dir / "posterior_check" / model_dir_name(a.spec.variant));
  log << to_string(a.spec.variant) << " adequacy: " << (r.pass ? "pass" : "fail") << '\n';
  for (const auto& c : r.statistics) log << "  " << c.name << ": tail p " << detail::fixed(c.tail_p, 3) << '\n';
  return r.pass ? kExitOk : kExitVerdict;
}

// sbc -----------------------------------------------------------------------------------------------

inline SbcResult sbc_model(const RunConfig& cfg, Variant v, const Dataset* ds, const std::filesystem::path& dir) {
  SbcConfig sc = cfg.sbc;
  sc.seed = cfg.seed() ^ (static_cast<std::uint64_t>(v) + 1) * 0x9E3779B97F4A7C15ull;
  sc.threads = cfg.threads();
  ModelSpec spec;
  std::vector<PreparedRow> design;
  if (v == Variant::Toy) {
    spec = ModelSpec::toy();
    spec.priors = cfg.priors;
    design.assign(static_cast<std::size_t>(cfg.sbc_rows), PreparedRow{});
  } else {
    if (!ds) throw UsageError("SBC of a regression model needs the dataset design (--data)");
    spec = spec_for(v, *ds, cfg);
    design = ds->rows;
  }
  const SbcResult r = sbc(sc, spec, design);
  write_text_file(dir / "sbc.json", dump(to_json(r)));
  write_text_file(dir / "sbc_ranks.csv", sbc_ranks_csv(r));
  return r;
}

inline bool sbc_pass(const SbcResult& r) { return r.n_ok() > 0 && r.min_p() > 0.01; }

inline int cmd_sbc(const RunConfig& cfg, std::ostream& log) {
  std::optional<Dataset> ds;
  if (!cfg.data_path.empty()) ds = load_dataset(cfg);
  bool ok = true;
  for (Variant v : cfg.models) {
    const SbcResult r = sbc_model(cfg, v, ds ? &*ds : nullptr, cfg.output_dir / "sbc" / model_dir_name(v));
    log << to_string(v) << " SBC: " << (sbc_pass(r) ? "pass" : "fail") << " (min p " << detail::fixed(r.min_p(), 4)
        << ", " << r.n_ok() << " of " << r.iterations.size() << " fits)\n";
    ok = ok && sbc_pass(r);
  }
  return ok ? kExitOk : kExitVerdict;
}

// compare -------------------------------------------------------------------------------------------

struct ModelLoo {
  std::string name;
  LooResult loo;
  WaicResult waic;
};

inline ModelLoo loo_for(const FitArchive& a, const Dataset& ds, int threads) {
  const LogLikMatrix ll = pointwise_loglik(a.spec, a.draws, ds, threads);
  return {to_string(a.spec.variant), loo(ll, threads), waic(ll)};
}

/// Comparison table, per-model details and a difference plot.
inline ComparisonTable write_comparison(const std::vector<ModelLoo>& fits, const std::filesystem::path& dir) {
  std::vector<NamedLoo> named;
  for (const auto& f : fits) {
    named.push_back({f.name, f.loo});
    Json j = to_json(f.loo);
    j["waic"] = to_json(f.waic);
    write_text_file(dir / ("loo_" + f.name + ".json"), dump(j));
  }
  const ComparisonTable t = compare(named);
  write_text_file(dir / "comparison.csv", comparison_csv(t));
  write_text_file(dir / "comparison.json", dump(to_json(t)));
  std::vector<svg::IntervalMark> marks;
  for (const auto& r : t.rows) {
    const double d = r.elpd_diff_best.value_or(0.0);
    const double se = r.se_diff_best.value_or(0.0);
    marks.push_back({r.model, d - 2.0 * se, d, d + 2.0 * se});
  }
  write_text_file(dir / "comparison.svg", svg::intervals(marks, "elpd difference to the best model (2 SE)", "elpd difference"));
  return t;
}

inline void report_comparison(std::ostream& log, const ComparisonTable& t) {
  log << std::left << std::setw(6) << "model" << std::setw(6) << "rank" << std::setw(14) << "difference"
      << "standard error\n";
  for (const auto& r : t.rows)
    log << std::setw(6) << r.model << std::setw(6) << r.rank << std::setw(14)
        << (r.elpd_diff ? detail::fixed(*r.elpd_diff, 1) : std::string("-"))
        << (r.se_diff ? detail::fixed(*r.se_diff, 1) : std::string("-")) << '\n';
}

inline int cmd_compare(const std::vector<std::filesystem::path>& archives, const RunConfig& cfg, std::ostream& log) {
  if (archives.size() < 2) throw UsageError("compare needs at least two archives");
  const Dataset ds = load_dataset(cfg);
  std::vector<ModelLoo> fits;
  std::set<std::string> seen;
  for (const auto& dir : archives) {
    const FitArchive a = analysis_archive(dir, ds, cfg.force);
    if (!seen.insert(to_string(a.spec.variant)).second)
      throw UsageError("two archives hold the same model " + to_string(a.spec.variant));
    fits.push_back(loo_for(a, ds, cfg.threads()));
  }
  report_comparison(log, write_comparison(fits, cfg.output_dir / "compare"));
  return kExitOk;
}

// workflow ------------------------------------------------------------------------------------------

struct ModelReport {
  Variant model;
  std::optional<EnsembleSummary> prior;
  std::optional<Diagnostics> diagnostics;
  std::optional<AdequacyReport> adequacy;
  std::optional<SbcResult> sbc;
  std::vector<std::string> errors;
  [[nodiscard]] bool workable() const { return diagnostics && diagnostics->pass && (!sbc || sbc_pass(*sbc)); }
  [[nodiscard]] bool adequate() const { return adequacy && adequacy->pass; }
};

struct WorkflowReport {
  std::vector<ModelReport> models;
  std::optional<ComparisonTable> comparison;
  std::string comparison_note;
};

namespace detail {

inline std::string verdict_cell(bool present, bool pass) { return present ? (pass ? "pass" : "fail") : "skipped"; }

inline double min_tail_p(const AdequacyReport& r) {
  double m = kInf;
  for (const auto& s : r.statistics) m = std::min(m, s.tail_p);
  return m;
}

inline std::string workflow_markdown(const WorkflowReport& w, const RunConfig& cfg, const DataSummary& s) {
  std::ostringstream md;
  md << "# Workflow summary\n\n"
     << "Dataset: " << s.n_rows << " rows, " << s.n_languages << " languages, " << s.n_projects << " projects. "
     << "Seed " << cfg.seed() << ", " << cfg.sampler.n_chains << " chains x " << cfg.sampler.n_draws << " draws ("
     << cfg.sampler.n_warmup << " warmup).\n\n"
     << "## Checks\n\n"
     << "| model | plausible: prior max | prior 99% | workable | max rhat | min ESS ratio | divergences | SBC | adequate | min tail p |\n"
     << "|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& m : w.models) {
    md << "| " << to_string(m.model) << " | " << (m.prior ? fixed(m.prior->max, 0) : "-") << " | "
       << (m.prior ? fixed(m.prior->pooled_q99, 1) : "-") << " | " << verdict_cell(m.diagnostics.has_value(), m.workable())
       << " | " << (m.diagnostics ? fixed(m.diagnostics->max_rhat, 4) : "-") << " | "
       << (m.diagnostics ? fixed(m.diagnostics->min_ess_ratio, 3) : "-") << " | "
       << (m.diagnostics ? std::to_string(m.diagnostics->divergences) : "-") << " | "
       << (m.sbc ? (sbc_pass(*m.sbc) ? "pass" : "fail") : "not run") << " | "
       << verdict_cell(m.adequacy.has_value(), m.adequate()) << " | "
       << (m.adequacy ? fixed(min_tail_p(*m.adequacy), 3) : "-") << " |\n";
  }
  bool any_error = false;
  for (const auto& m : w.models)
    for (const auto& e : m.errors) {
      if (!any_error) md << "\n### Stage notes\n\n";
      any_error = true;
      md << "- " << to_string(m.model) << ": " << e << '\n';
    }
  md << "\n## Comparison (PSIS-LOO)\n\n";
  if (!w.comparison) {
    md << w.comparison_note << "\n";
  } else {
    md << "Ranked from better to worse; differences are to the immediately better model.\n\n"
       << "| model | rank | difference | standard error | elpd_loo | p_loo | high k |\n|---|---|---|---|---|---|---|\n";
    for (const auto& r : w.comparison->rows)
      md << "| " << r.model << " | " << r.rank << " | " << (r.elpd_diff ? fixed(*r.elpd_diff, 1) : "-") << " | "
         << (r.se_diff ? fixed(*r.se_diff, 1) : "-") << " | " << fixed(r.elpd_loo, 1) << " | " << fixed(r.p_loo, 1)
         << " | " << r.n_high_k << " |\n";
  }
  return md.str();
}

inline std::string workflow_csv(const WorkflowReport& w) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& m : w.models) {
    std::vector<std::string> r = {to_string(m.model),
                                  m.prior ? num(m.prior->max) : "",
                                  m.prior ? num(m.prior->pooled_q99) : "",
                                  verdict_cell(m.diagnostics.has_value(), m.workable()),
                                  m.diagnostics ? num(m.diagnostics->max_rhat) : "",
                                  m.diagnostics ? num(m.diagnostics->min_ess_ratio) : "",
                                  m.diagnostics ? std::to_string(m.diagnostics->divergences) : "",
                                  m.sbc ? (sbc_pass(*m.sbc) ? "pass" : "fail") : "not run",
                                  verdict_cell(m.adequacy.has_value(), m.adequate()),
                                  m.adequacy ? num(min_tail_p(*m.adequacy)) : ""};
    std::string rank, diff, se;
    if (w.comparison)
      for (const auto& c : w.comparison->rows)
        if (c.model == to_string(m.model)) {
          rank = std::to_string(c.rank);
          diff = opt_num(c.elpd_diff);
          se = opt_num(c.se_diff);
        }
    r.insert(r.end(), {rank, diff, se});
    rows.push_back(std::move(r));
  }
  return table({"model", "prior_max", "prior_q99", "workable", "max_rhat", "min_ess_ratio", "divergences", "sbc",
                "adequate", "min_tail_p", "loo_rank", "difference", "standard_error"},
               rows);
}

}  // namespace detail

/// prior-check, fit and diagnose, posterior-check (and optionally SBC) per model, then compare
/// every workable model. A failed stage is recorded and the model's later stages are skipped.
inline WorkflowReport run_workflow(const RunConfig& cfg, std::ostream& log) {
  const Dataset ds = load_dataset(cfg);
  const DataSummary summary = summarize(ds);
  const auto root = cfg.output_dir / "workflow";
  write_text_file(root / "data_summary.json", dump(to_json(summary)));
  WorkflowReport w;
  std::vector<ModelLoo> loos;
  for (Variant v : cfg.models) {
    if (v == Variant::Toy) throw UsageError("workflow runs the regression models");
    ModelReport m{v, {}, {}, {}, {}, {}};
    const auto dir = root / model_dir_name(v);
    log << "[" << to_string(v) << "] prior predictive check\n";
    m.prior = prior_check_model(cfg, v, ds, dir).summary;
    log << "[" << to_string(v) << "] fit\n";
    std::optional<FitArchive> a;
    try {
      a = fit_model(cfg, v, ds);
      save_archive(dir / "fit", *a, cfg.force);
      m.diagnostics = a->diagnostics;
      report_diagnostics(log, "  " + to_string(v), a->diagnostics);
    } catch (const SamplerError& e) {
      m.errors.push_back(std::string("sampler: ") + e.what());
    }
    if (cfg.run_sbc && m.diagnostics && m.diagnostics->pass) {
      log << "[" << to_string(v) << "] simulation-based calibration\n";
      m.sbc = sbc_model(cfg, v, &ds, dir / "sbc");
    }
    if (m.workable()) {
      log << "[" << to_string(v) << "] posterior predictive check\n";
      m.adequacy = posterior_check_model(cfg, *a, ds, dir);
      loos.push_back(loo_for(*a, ds, cfg.threads()));
    } else if (m.diagnostics) {
      m.errors.push_back("not workable; posterior check and comparison skipped");
    }
    w.models.push_back(std::move(m));
  }
  if (loos.size() >= 2) {
    w.comparison = write_comparison(loos, root / "compare");
  } else {
    w.comparison_note = loos.empty() ? "nothing to compare: no workable model" : "nothing to compare: only one workable model";
  }
  write_text_file(root / "summary.md", detail::workflow_markdown(w, cfg, summary));
  write_text_file(root / "summary.csv", detail::workflow_csv(w));
  return w;
}

/// Exit 1 when any model fails a computational check (diagnostics or SBC); inadequate
/// models are a finding reported in the summary, not a failure of the run.
inline int cmd_workflow(const RunConfig& cfg, std::ostream& log) {
  const WorkflowReport w = run_workflow(cfg, log);
  if (w.comparison) report_comparison(log, *w.comparison);
  else log << w.comparison_note << '\n';
  log << "summary: " << (cfg.output_dir / "workflow" / "summary.md").string() << '\n';
  for (const auto& m : w.models)
    if (!m.workable()) return kExitVerdict;
  return kExitOk;
}

// rank / scenario / effect ------------------------------------------------------------------------

inline std::string scenario_tag(double q) { return "q" + csv::format_double(q); }

inline int cmd_rank(const std::filesystem::path& archive_dir, const std::vector<double>& quantiles, const RunConfig& cfg,
                    std::ostream& log) {
  if (quantiles.empty()) throw UsageError("rank needs at least one quantile");
  const Dataset ds = load_dataset(cfg);
  const FitArchive a = analysis_archive(archive_dir, ds, cfg.force);
  const auto post = posterior_params(a.spec, a.draws);
  const DataSummary s = summarize(ds);
  const auto dir = cfg.output_dir / "rank";
  for (std::size_t k = 0; k < quantiles.size(); ++k) {
    const Scenario sc = quantile_scenario(s, quantiles[k]);
    Rng rng(cfg.seed(), 3, k);
    const LanguagePrediction pred = simulate_scenario(rng, a.spec, post, ds, sc);
    const Ranking r = rank_languages(pred);
    const std::string tag = scenario_tag(quantiles[k]);
    write_text_file(dir / ("ranking_" + tag + ".csv"), ranking_csv(r, sc.label));
    write_text_file(dir / ("violin_" + tag + ".csv"), violin_csv(pred, r));
    const auto violins = violins_from_csv(violin_csv(pred, r));
    std::vector<std::string> labels;
    std::vector<std::vector<double>> qs;
    for (const auto& v : violins) {
      labels.push_back(v.label);
      qs.push_back(v.quantiles);
    }
    write_text_file(dir / ("violin_" + tag + ".svg"), svg::violins(labels, qs, "predicted bugs at quantile " + csv::format_double(quantiles[k])));
    log << "quantile " << csv::format_double(quantiles[k]) << ":";
    for (const auto& row : r.rows) log << ' ' << row.language;
    log << (r.tie ? " (tie broken by label)" : "") << '\n';
  }
  return kExitOk;
}

inline int cmd_scenario(const std::filesystem::path& archive_dir, const Scenario& scenario, const RunConfig& cfg,
                        std::ostream& log) {
  scenario.validate();  // before any loading or sampling
  const Dataset ds = load_dataset(cfg);
  const FitArchive a = analysis_archive(archive_dir, ds, cfg.force);
  Rng rng(cfg.seed(), 4, 0);
  const LanguagePrediction pred = simulate_scenario(rng, a.spec, posterior_params(a.spec, a.draws), ds, scenario);
  const std::string label = scenario.label.empty() ? "scenario" : scenario.label;
  const auto dir = cfg.output_dir / "scenario" / label;
  Ranking r;
  if (pred.counts.size() >= 2) {
    r = rank_languages(pred);
  } else {
    // a single language still gets a one-row table
    std::vector<double> v = pred.counts[0];
    std::sort(v.begin(), v.end());
    r.rows.push_back({1, pred.languages[0], quantile_sorted(v, 0.5), mean(v), quantile_sorted(v, 0.025), quantile_sorted(v, 0.975)});
  }
  write_text_file(dir / "prediction.csv", ranking_csv(r, label));
  write_text_file(dir / "violin.csv", violin_csv(pred, r));
  std::vector<std::string> labels;
  std::vector<std::vector<double>> qs;
  for (const auto& v : violins_from_csv(violin_csv(pred, r))) {
    labels.push_back(v.label);
    qs.push_back(v.quantiles);
  }
  write_text_file(dir / "violin.svg", svg::violins(labels, qs, "predicted bugs: " + label));
  for (const auto& row : r.rows)
    log << row.language << ": median " << detail::fixed(row.median, 1) << ", mean " << detail::fixed(row.mean, 1)
        << ", 95% [" << detail::fixed(row.q025, 1) << ", " << detail::fixed(row.q975, 1) << "]\n";
  if (!pred.note.empty()) log << "note: " << pred.note << '\n';
  return kExitOk;
}

struct EffectRequest {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::vector<std::string> parameters;  // credible intervals
  std::optional<std::string> conditional;  // predictor name
  int projects = 0;                        // simulate_projects count (M3)
  double probability = 0.95;
};

inline int predictor_index(const std::string& name) {
  for (int k = 0; k < kNumPredictors; ++k)
    if (name == kPredictorNames[static_cast<std::size_t>(k)]) return k;
  throw UsageError("unknown predictor '" + name + "'");
}

inline int cmd_effect(const std::filesystem::path& archive_dir, const EffectRequest& req, const RunConfig& cfg,
                      std::ostream& log) {
  if (req.pairs.empty() && req.parameters.empty() && !req.conditional && req.projects == 0)
    throw UsageError("effect needs --pair, --interval, --conditional or --projects");
  const Dataset ds = load_dataset(cfg);
  const FitArchive a = analysis_archive(archive_dir, ds, cfg.force);
  const auto post = posterior_params(a.spec, a.draws);
  const auto dir = cfg.output_dir / "effect";
  for (std::size_t k = 0; k < req.pairs.size(); ++k) {
    const auto& [n1, n2] = req.pairs[k];
    Rng rng(cfg.seed(), 5, k);
    const PairwiseDiff d = pairwise_effect(rng, a.spec, post, ds, ds.language_index(n1), ds.language_index(n2), cfg.pairwise);
    write_text_file(dir / ("pair_" + n1 + "_" + n2 + ".csv"), pairwise_csv(d));
    log << n1 << " - " << n2 << ": P(diff > 0) = " << detail::fixed(d.prob_positive, 4) << '\n';
  }
  if (!req.parameters.empty()) {
    const NamedSamples ns = named_samples(a.draws);
    std::vector<IntervalRow> rows;
    for (const auto& name : req.parameters) {
      if (std::find(ns.names.begin(), ns.names.end(), name) == ns.names.end())
        throw UsageError("unknown parameter '" + name + "'");
      const auto col = ns.column(ns.index_of(name));
      const Interval iv = credible_interval(col, req.probability);
      rows.push_back({name, iv.low, median(col), iv.high});
      log << name << ": " << csv::format_fixed(req.probability * 100.0, 0) << "% interval [" << detail::fixed(iv.low, 4)
          << ", " << detail::fixed(iv.high, 4) << "]\n";
    }
    write_text_file(dir / "intervals.csv", interval_csv(rows, req.probability));
    std::vector<svg::IntervalMark> marks;
    for (const auto& r : rows) marks.push_back({r.label, r.low, r.mid, r.high});
    write_text_file(dir / "intervals.svg", svg::intervals(marks, "central credible intervals"));
  }
  if (req.conditional) {
    const int p = predictor_index(*req.conditional);
    const DataSummary s = summarize(ds);
    const Scenario anchor = quantile_scenario(s, 0.5);
    std::vector<double> grid;
    const auto& col = s.sorted_predictors[static_cast<std::size_t>(p)];
    for (double x : linspace(col.front(), col.back(), 50))
      grid.push_back(std::exp(x) - (ds.zero_policy == ZeroPolicy::Offset ? 0.5 : 0.0));
    const EffectCurve c = conditional_effect(a.spec, post, ds, p, grid, anchor);
    write_text_file(dir / ("conditional_" + *req.conditional + ".csv"), effect_curve_csv(c));
    write_text_file(dir / ("conditional_" + *req.conditional + ".svg"),
                    svg::band(c.grid, c.mean, c.low, c.high, "conditional effect of " + *req.conditional,
                              *req.conditional, "expected bugs"));
    log << "conditional effect of " << *req.conditional << " written\n";
  }
  if (req.projects > 0) {
    Rng rng(cfg.seed(), 6, 0);
    const ProjectSimulation sim = simulate_projects(rng, a.spec, post, ds, req.projects);
    LanguagePrediction as_pred;
    as_pred.languages = sim.labels;
    as_pred.counts = sim.counts;
    Ranking order;
    for (std::size_t k = 0; k < sim.labels.size(); ++k) order.rows.push_back({static_cast<int>(k) + 1, sim.labels[k]});
    write_text_file(dir / "projects.csv", violin_csv(as_pred, order));
    std::vector<std::vector<double>> qs;
    for (const auto& v : violins_from_csv(violin_csv(as_pred, order))) qs.push_back(v.quantiles);
    write_text_file(dir / "projects.svg", svg::violins(sim.labels, qs, "simulated projects"));
    const SdOverlay o = posterior_vs_prior_sd(a.spec, post);
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < o.grid.size(); i += 8)
      rows.push_back({detail::num(o.grid[i]), detail::num(o.prior[i]), detail::num(o.posterior[i])});
    write_text_file(dir / "sigma_gamma.csv", detail::table({"sigma_gamma", "prior", "posterior"}, rows));
    write_text_file(dir / "sigma_gamma.svg",
                    svg::prior_posterior(o.grid, o.prior, o.posterior, "sigma_gamma: prior and posterior", "sigma_gamma"));
    log << "sigma_gamma: prior sd " << detail::fixed(o.prior_sd, 3) << ", posterior sd " << detail::fixed(o.posterior_sd, 4)
        << '\n';
  }
  return kExitOk;
}

// plot ----------------------------------------------------------------------------------------------

inline int cmd_plot(const std::string& kind, const std::filesystem::path& input, const std::filesystem::path& output,
                    std::ostream& log) {
  const std::string text = read_text_file(input);
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) throw UsageError("empty input table " + input.string());
  std::string out;
  if (kind == "density-overlay") {
    out = svg::density_overlay(curves_from_csv(text), input.stem().string());
  } else if (kind == "violin") {
    std::vector<std::string> labels;
    std::vector<std::vector<double>> qs;
    for (const auto& v : violins_from_csv(text)) {
      labels.push_back(v.label);
      qs.push_back(v.quantiles);
    }
    out = svg::violins(labels, qs, input.stem().string());
  } else if (kind == "interval") {
    std::vector<svg::IntervalMark> marks;
    for (const auto& r : intervals_from_csv(text)) marks.push_back({r.label, r.low, r.mid, r.high});
    out = svg::intervals(marks, input.stem().string());
  } else if (kind == "trace") {
    const Draws d = draws_from_csv(text);
    std::vector<std::vector<double>> lp(static_cast<std::size_t>(d.n_chains));
    for (int c = 0; c < d.n_chains; ++c)
      for (int i = 0; i < d.n_draws; ++i) lp[c].push_back(d.stat(c, i).lp);
    out = svg::trace(lp, "lp__");
  } else {
    throw UsageError("unknown plot kind '" + kind + "' (density-overlay, violin, interval, trace)");
  }
  write_text_file(output, out);
  log << "wrote " << output.string() << '\n';
  return kExitOk;
}

// simulate ------------------------------------------------------------------------------------------

/// Synthetic commit-aggregate data from an M3-style generative process.
struct SimulationConfig {
  int languages = 5;
  int projects = 60;
  int rows = 150;
  std::uint64_t seed = 1;
  double alpha = -1.6;
  std::array<double, kNumPredictors> beta = {0.9, 0.05, 0.05, 0.2};
  double sigma_alpha = 0.5;
  std::array<double, kNumPredictors> sigma_beta = {0.1, 0.05, 0.05, 0.1};
  double sigma_gamma = 1.0;
  double phi = 3.0;

  void validate() const {
    if (languages < 1 || projects < 1 || rows < projects)
      throw UsageError("simulation needs rows >= projects >= 1 and at least one language");
    if (static_cast<long>(rows) > static_cast<long>(languages) * projects)
      throw UsageError("more rows than distinct (project, language) pairs");
    if (!(phi > 0.0) || sigma_gamma < 0.0 || sigma_alpha < 0.0) throw UsageError("invalid simulation parameters");
  }
};

struct Simulated {
  std::vector<RawRecord> records;
  std::vector<double> alpha_language;
  std::vector<double> alpha_project;
};

/// Every project gets at least one row. Bugs are drawn from the NB model on the log of
/// the rounded predictors; a draw above the commit count is redrawn (the data contract
/// requires bugs <= commits), so the rate is best kept well below the commit count.
inline Simulated simulate_dataset(const SimulationConfig& c) {
  c.validate();
  Rng rng(c.seed, 0xDA7A);
  Simulated out;
  std::vector<std::array<double, kNumPredictors>> slopes(static_cast<std::size_t>(c.languages));
  for (int l = 0; l < c.languages; ++l) {
    out.alpha_language.push_back(rng.normal(0.0, c.sigma_alpha));
    for (std::size_t j = 0; j < kNumPredictors; ++j) slopes[l][j] = rng.normal(0.0, c.sigma_beta[j]);
  }
  for (int p = 0; p < c.projects; ++p) out.alpha_project.push_back(rng.normal(0.0, c.sigma_gamma));
  std::vector<std::set<int>> used(static_cast<std::size_t>(c.projects));
  for (int i = 0; i < c.rows; ++i) {
    int p = i < c.projects ? i : static_cast<int>(rng.index(static_cast<std::size_t>(c.projects)));
    while (static_cast<int>(used[p].size()) == c.languages) p = static_cast<int>(rng.index(static_cast<std::size_t>(c.projects)));
    int l = static_cast<int>(rng.index(static_cast<std::size_t>(c.languages)));
    while (used[p].count(l)) l = (l + 1) % c.languages;
    used[p].insert(l);
    RawRecord r;
    r.project = "project" + std::to_string(p + 1);
    r.language = "lang" + std::to_string(l + 1);
    r.commits = std::max<std::int64_t>(2, std::llround(std::exp(rng.normal(5.5, 1.8))));
    r.insertions = std::max<std::int64_t>(1, std::llround(static_cast<double>(r.commits) * std::exp(rng.normal(3.0, 1.0))));
    r.age = std::round(std::exp(rng.normal(6.5, 0.8)) * 100.0) / 100.0 + 1.0;
    r.devs = std::max<std::int64_t>(1, std::llround(std::exp(rng.normal(1.2, 0.9))));
    const std::array<double, kNumPredictors> x = {std::log(static_cast<double>(r.commits)),
                                                  std::log(static_cast<double>(r.insertions)), std::log(r.age),
                                                  std::log(static_cast<double>(r.devs))};
    double eta = c.alpha + out.alpha_language[l] + out.alpha_project[p];
    for (std::size_t j = 0; j < kNumPredictors; ++j) eta += (c.beta[j] + slopes[l][j]) * x[j];
    double y = nb_draw_log_rate(rng, eta, c.phi);
    for (int retry = 0; retry < 1000 && y > static_cast<double>(r.commits); ++retry) y = nb_draw_log_rate(rng, eta, c.phi);
    r.bugs = static_cast<std::int64_t>(std::min(y, static_cast<double>(r.commits)));
    out.records.push_back(std::move(r));
  }
  return out;
}

inline int cmd_simulate(const SimulationConfig& sim, const std::filesystem::path& output, std::ostream& log) {
  const Simulated s = simulate_dataset(sim);
  write_text_file(output, records_csv(s.records));
  log << "wrote " << s.records.size() << " rows to " << output.string() << '\n';
  return kExitOk;
}

}  // namespace bayeswork
