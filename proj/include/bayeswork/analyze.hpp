#pragma once

// Practical-significance views of a fitted regression model: scenario predictions,
// language rankings, pairwise effects, conditional effects and project variability.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "bayeswork/data.hpp"
#include "bayeswork/diagnostics.hpp"
#include "bayeswork/math.hpp"
#include "bayeswork/model.hpp"
#include "bayeswork/random.hpp"
#include "bayeswork/sampler.hpp"

namespace bayeswork {

/// Natural-space parameters of every retained draw, chain-major.
inline std::vector<Params> posterior_params(const ModelSpec& spec, const Draws& draws) {
  if (draws.dim != dim(spec)) throw std::invalid_argument("draws do not match the model");
  std::vector<Params> out;
  out.reserve(draws.total());
  for (int c = 0; c < draws.n_chains; ++c)
    for (int i = 0; i < draws.n_draws; ++i) out.push_back(constrain(spec, draws.point(c, i)));
  return out;
}

namespace detail {

inline void require_regression(const ModelSpec& spec, bool slopes, const char* what) {
  if (spec.is_toy() || (slopes && !spec.has_slopes()))
    throw std::invalid_argument(std::string(what) + " needs a model with predictor slopes (M2 or M3)");
}

inline void require_language(const ModelSpec& spec, int l) {
  if (l < 0 || l >= spec.n_languages)
    throw std::invalid_argument("unknown language index " + std::to_string(l));
}

/// log rate for language l with log predictors x and project intercept gamma.
inline double scenario_eta(const ModelSpec& spec, const Params& p, int l,
                           const std::array<double, kNumPredictors>& x, double gamma) {
  double eta = p.alpha + p.alpha_language(l);
  if (spec.has_slopes())
    for (int j = 0; j < kNumPredictors; ++j) eta += p.beta[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(j)];
  if (spec.variant == Variant::M3) {
    for (int j = 0; j < kNumPredictors; ++j) eta += p.beta_language(l, j) * x[static_cast<std::size_t>(j)];
    eta += gamma;
  }
  return eta;
}

inline constexpr std::uint64_t kProjectStream = 0xFFFFFFFFull;

}  // namespace detail

// Scenarios -----------------------------------------------------------------------------

struct LanguagePrediction {
  std::vector<std::string> languages;
  std::vector<int> language_indices;
  std::vector<std::vector<double>> counts;  // [language][draw]
  Scenario scenario;
  std::string note;
};

/// Simulated bug counts of a hypothetical new project for each language. One new project
/// intercept is drawn per posterior draw (M3) and shared by all languages of that draw.
inline LanguagePrediction simulate_scenario(Rng& rng, const ModelSpec& spec, std::span<const Params> posterior,
                                            const Dataset& reference, const Scenario& scenario) {
  detail::require_regression(spec, true, "simulate_scenario");
  if (posterior.empty()) throw std::invalid_argument("empty posterior");
  const auto x = scenario.log_predictors(reference);
  LanguagePrediction pred;
  pred.scenario = scenario;
  if (scenario.language) {
    detail::require_language(spec, *scenario.language);
    pred.language_indices = {*scenario.language};
  } else {
    for (int l = 0; l < spec.n_languages; ++l) pred.language_indices.push_back(l);
  }
  for (int l : pred.language_indices) pred.languages.push_back(spec.language_label(l));
  if (spec.variant == Variant::M3)
    pred.note = "new-project intercept drawn from Normal(0, sigma_gamma) per posterior draw";

  const std::uint64_t key = rng();
  pred.counts.assign(pred.language_indices.size(), std::vector<double>(posterior.size()));
  for (std::size_t s = 0; s < posterior.size(); ++s) {
    const Params& p = posterior[s];
    double gamma = 0.0;
    if (spec.variant == Variant::M3) {
      Rng project_rng(key, s + 1, detail::kProjectStream);
      gamma = project_rng.normal(0.0, p.sigma_gamma);
    }
    for (std::size_t k = 0; k < pred.language_indices.size(); ++k) {
      const int l = pred.language_indices[k];
      Rng draw_rng(key, s + 1, static_cast<std::uint64_t>(l));
      pred.counts[k][s] = nb_draw_log_rate(draw_rng, detail::scenario_eta(spec, p, l, x, gamma), p.phi);
    }
  }
  return pred;
}

inline LanguagePrediction simulate_scenario(Rng& rng, const ModelSpec& spec, const Draws& draws,
                                            const Dataset& reference, const Scenario& scenario) {
  return simulate_scenario(rng, spec, posterior_params(spec, draws), reference, scenario);
}

struct RankingRow {
  int rank = 0;
  std::string language;
  double median = 0.0;
  double mean = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
};

struct Ranking {
  std::vector<RankingRow> rows;  // most defect-prone first
  bool tie = false;              // some order was decided by the label rule
};

/// Languages by decreasing median count; ties go to the larger mean, then the label.
inline Ranking rank_languages(const LanguagePrediction& pred) {
  if (pred.counts.size() < 2) throw std::invalid_argument("ranking needs at least two languages");
  Ranking r;
  for (std::size_t k = 0; k < pred.counts.size(); ++k) {
    std::vector<double> v = pred.counts[k];
    std::sort(v.begin(), v.end());
    RankingRow row;
    row.language = pred.languages[k];
    row.median = quantile_sorted(v, 0.5);
    row.mean = mean(v);
    row.q025 = quantile_sorted(v, 0.025);
    row.q975 = quantile_sorted(v, 0.975);
    r.rows.push_back(row);
  }
  std::sort(r.rows.begin(), r.rows.end(), [](const RankingRow& a, const RankingRow& b) {
    if (a.median != b.median) return a.median > b.median;
    if (a.mean != b.mean) return a.mean > b.mean;
    return a.language < b.language;
  });
  for (std::size_t k = 0; k < r.rows.size(); ++k) {
    r.rows[k].rank = static_cast<int>(k) + 1;
    if (k > 0 && r.rows[k].median == r.rows[k - 1].median && r.rows[k].mean == r.rows[k - 1].mean)
      r.tie = true;
  }
  return r;
}

// Pairwise effects ---------------------------------------------------------------------

struct PairwiseOptions {
  bool sample_counts = false;   // NB draws instead of expected counts
  bool reuse_project = false;   // row's fitted project intercept instead of a fresh one (M3)
};

struct PairwiseDiff {
  std::string language_1;
  std::string language_2;
  std::vector<double> samples;  // bugs_1 - bugs_2, one per (draw, row)
  double prob_positive = 0.0;   // fraction of samples strictly above zero
  double prob_negative = 0.0;
  PairwiseOptions options;
};

/// For every data row and posterior draw, the count under language l1 minus the count under
/// l2 with all other predictors kept at the row's values.
inline PairwiseDiff pairwise_effect(Rng& rng, const ModelSpec& spec, std::span<const Params> posterior,
                                    const Dataset& data, int l1, int l2, const PairwiseOptions& options = {}) {
  detail::require_regression(spec, false, "pairwise_effect");
  detail::require_language(spec, l1);
  detail::require_language(spec, l2);
  if (posterior.empty()) throw std::invalid_argument("empty posterior");
  if (options.reuse_project && spec.variant == Variant::M3)
    for (const auto& row : data.rows) check_row(spec, row);
  PairwiseDiff d;
  d.language_1 = spec.language_label(l1);
  d.language_2 = spec.language_label(l2);
  d.options = options;
  const std::uint64_t key = rng();
  d.samples.resize(posterior.size() * data.size());
  std::size_t positive = 0, negative = 0;
  for (std::size_t s = 0; s < posterior.size(); ++s) {
    const Params& p = posterior[s];
    Rng draw_rng(key, s + 1, 0);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const PreparedRow& row = data.rows[i];
      double gamma = 0.0;
      if (spec.variant == Variant::M3)
        gamma = options.reuse_project ? p.alpha_project(row.project_index)
                                      : draw_rng.normal(0.0, p.sigma_gamma);
      const double eta1 = detail::scenario_eta(spec, p, l1, row.x, gamma);
      const double eta2 = detail::scenario_eta(spec, p, l2, row.x, gamma);
      double diff;
      if (options.sample_counts) {
        diff = nb_draw_log_rate(draw_rng, eta1, p.phi) - nb_draw_log_rate(draw_rng, eta2, p.phi);
      } else {
        diff = l1 == l2 ? 0.0 : std::exp(eta1) - std::exp(eta2);
      }
      d.samples[s * data.size() + i] = diff;
      positive += diff > 0.0 ? 1 : 0;
      negative += diff < 0.0 ? 1 : 0;
    }
  }
  const auto n = static_cast<double>(d.samples.size());
  d.prob_positive = static_cast<double>(positive) / n;
  d.prob_negative = static_cast<double>(negative) / n;
  return d;
}

inline PairwiseDiff pairwise_effect(Rng& rng, const ModelSpec& spec, const Draws& draws, const Dataset& data,
                                    int l1, int l2, const PairwiseOptions& options = {}) {
  return pairwise_effect(rng, spec, posterior_params(spec, draws), data, l1, l2, options);
}

// Conditional effects and intervals ------------------------------------------------------

struct EffectCurve {
  std::string predictor;
  std::vector<double> grid;  // natural units
  std::vector<double> mean;
  std::vector<double> low;   // 2.5%
  std::vector<double> high;  // 97.5%
};

/// Population-level expected count exp(alpha + beta . x) as one predictor moves along
/// `grid` (natural units) with the others held at the anchor scenario.
inline EffectCurve conditional_effect(const ModelSpec& spec, std::span<const Params> posterior,
                                      const Dataset& reference, int predictor, std::span<const double> grid,
                                      const Scenario& anchor) {
  detail::require_regression(spec, false, "conditional_effect");
  if (grid.empty()) throw std::invalid_argument("conditional_effect needs a nonempty grid");
  if (predictor < 0 || predictor >= kNumPredictors) throw std::invalid_argument("unknown predictor index");
  if (posterior.empty()) throw std::invalid_argument("empty posterior");
  auto x = anchor.log_predictors(reference);
  EffectCurve curve;
  curve.predictor = kPredictorNames[static_cast<std::size_t>(predictor)];
  std::vector<double> values(posterior.size());
  for (double g : grid) {
    if (!(g > 0.0) && reference.zero_policy == ZeroPolicy::Strict)
      throw DataError("grid values must be positive");
    x[static_cast<std::size_t>(predictor)] = reference.transform(predictor, g);
    for (std::size_t s = 0; s < posterior.size(); ++s) {
      double eta = posterior[s].alpha;
      if (spec.has_slopes())
        for (std::size_t j = 0; j < kNumPredictors; ++j) eta += posterior[s].beta[j] * x[j];
      values[s] = std::exp(eta);
    }
    curve.grid.push_back(g);
    curve.mean.push_back(mean(values));
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    curve.low.push_back(quantile_sorted(sorted, 0.025));
    curve.high.push_back(quantile_sorted(sorted, 0.975));
  }
  return curve;
}

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

/// Central (equal-tailed) interval holding `prob` of the samples.
inline Interval credible_interval(std::vector<double> samples, double prob) {
  if (samples.empty()) throw std::invalid_argument("interval of an empty sample");
  if (!(prob > 0.0 && prob < 1.0)) throw std::invalid_argument("interval probability must lie in (0, 1)");
  std::sort(samples.begin(), samples.end());
  const double tail = 0.5 * (1.0 - prob);
  return {quantile_sorted(samples, tail), quantile_sorted(samples, 1.0 - tail)};
}

/// Interval of a named natural-space parameter, e.g. "beta[insertions]".
inline Interval credible_interval(const Draws& draws, const std::string& name, double prob) {
  const NamedSamples ns = named_samples(draws);
  if (std::find(ns.names.begin(), ns.names.end(), name) == ns.names.end())
    throw std::invalid_argument("unknown parameter '" + name + "'");
  return credible_interval(ns.column(ns.index_of(name)), prob);
}

// Project variability ------------------------------------------------------------------

struct ProjectSimulation {
  std::vector<std::string> labels;
  std::vector<double> z;                    // standardized intercept of each project
  std::vector<std::vector<double>> counts;  // [project][draw]
};

/// Hypothetical projects from the fitted M3 posterior. Project k keeps one standardized
/// intercept z_k, so its intercept in draw s is sigma_gamma(s) * z_k; language and predictors
/// are taken from an observed row resampled with replacement in every draw.
inline ProjectSimulation simulate_projects(Rng& rng, const ModelSpec& spec, std::span<const Params> posterior,
                                           const Dataset& data, int n) {
  if (spec.variant != Variant::M3) throw std::invalid_argument("simulate_projects needs M3");
  if (n < 1) throw std::invalid_argument("simulate_projects needs at least one project");
  if (posterior.empty() || data.rows.empty()) throw std::invalid_argument("empty posterior or dataset");
  const std::uint64_t key = rng();
  ProjectSimulation out;
  for (int k = 0; k < n; ++k) {
    Rng project_rng(key, static_cast<std::uint64_t>(k) + 1, detail::kProjectStream);
    out.labels.push_back("project " + std::to_string(k + 1));
    out.z.push_back(project_rng.normal());
    std::vector<double> counts(posterior.size());
    for (std::size_t s = 0; s < posterior.size(); ++s) {
      Rng draw_rng(key, static_cast<std::uint64_t>(k) + 1, s);
      const PreparedRow& row = data.rows[draw_rng.index(data.size())];
      const Params& p = posterior[s];
      const double eta = detail::scenario_eta(spec, p, row.language_index, row.x, p.sigma_gamma * out.z.back());
      counts[s] = nb_draw_log_rate(draw_rng, eta, p.phi);
    }
    out.counts.push_back(std::move(counts));
  }
  return out;
}

struct SdOverlay {
  std::vector<double> grid;
  std::vector<double> prior;      // analytic Weibull density
  std::vector<double> posterior;  // kernel density of the posterior samples
  double prior_sd = 0.0;
  double posterior_sd = 0.0;
};

/// Prior and posterior densities of sigma_gamma on a shared grid starting at 0.
inline SdOverlay posterior_vs_prior_sd(const ModelSpec& spec, std::span<const Params> posterior,
                                       std::size_t points = 4001) {
  if (spec.variant != Variant::M3) throw std::invalid_argument("posterior_vs_prior_sd needs M3");
  if (posterior.empty()) throw std::invalid_argument("empty posterior");
  const double k = spec.priors.group_sd.shape;
  const double lambda = spec.priors.group_sd.scale;
  std::vector<double> samples, logs;
  for (const auto& p : posterior) {
    samples.push_back(p.sigma_gamma);
    logs.push_back(std::log(p.sigma_gamma));
  }
  // The prior has mass below 1e-12 beyond `upper`.
  const double upper = std::max(lambda * std::pow(-std::log(1e-12), 1.0 / k),
                                1.2 * *std::max_element(samples.begin(), samples.end()));
  SdOverlay o;
  o.grid = linspace(0.0, upper, points);
  for (double g : o.grid) {
    if (g > 0.0) o.prior.push_back(weibull_pdf(g, k, lambda));
    else o.prior.push_back(k > 1.0 ? 0.0 : (k == 1.0 ? 1.0 / lambda : kInf));
  }
  // Density on the log scale, mapped back, so no mass leaks below zero.
  std::vector<double> log_grid;
  for (std::size_t i = 1; i < o.grid.size(); ++i) log_grid.push_back(std::log(o.grid[i]));
  const auto f_log = kde(logs, log_grid);
  o.posterior.push_back(0.0);
  for (std::size_t i = 1; i < o.grid.size(); ++i) o.posterior.push_back(f_log[i - 1] / o.grid[i]);
  o.prior_sd = lambda * std::sqrt(std::tgamma(1.0 + 2.0 / k) - std::pow(std::tgamma(1.0 + 1.0 / k), 2));
  o.posterior_sd = sd(samples);
  return o;
}

}  // namespace bayeswork
