#pragma once

// Prior and posterior predictive checks, the quantitative adequacy verdict,
// and simulation-based calibration.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "bayeswork/diagnostics.hpp"
#include "bayeswork/math.hpp"
#include "bayeswork/model.hpp"
#include "bayeswork/random.hpp"
#include "bayeswork/sampler.hpp"

namespace bayeswork {

/// Simulated outcome vectors over one design, optionally with the observed vector.
struct PredictiveEnsemble {
  std::vector<std::vector<double>> simulations;
  std::optional<std::vector<double>> observed;

  [[nodiscard]] std::size_t n_rows() const {
    if (!simulations.empty()) return simulations.front().size();
    return observed ? observed->size() : 0;
  }
};

/// Counts are compared on log10(1 + count); zero counts stay finite.
inline double to_check_scale(double count) { return std::log10(1.0 + count); }

namespace detail {

inline double outcome_of(const ModelSpec& spec, const PreparedRow& row) {
  return spec.is_toy() ? row.height : static_cast<double>(row.bugs);
}

/// One outcome per design row, each from its own stream keyed by (key, sim, row id).
inline std::vector<double> simulate_keyed(std::uint64_t key, std::uint64_t sim, const ModelSpec& spec,
                                          const Params& p, std::span<const PreparedRow> design,
                                          std::span<const std::uint64_t> row_ids) {
  std::vector<double> out(design.size());
  for (std::size_t i = 0; i < design.size(); ++i) {
    Rng row_rng(key, sim + 1, row_ids.empty() ? i : row_ids[i]);
    out[i] = simulate_outcomes(row_rng, spec, p, design.subspan(i, 1))[0];
  }
  return out;
}

inline void require_matching(const ModelSpec& spec, const Draws& draws) {
  if (draws.dim != dim(spec) ||
      (draws.spec && (draws.spec->variant != spec.variant ||
                      draws.spec->n_languages != spec.n_languages ||
                      draws.spec->n_projects != spec.n_projects)))
    throw std::invalid_argument("draws were not produced for this model specification");
}

}  // namespace detail

/// Prior predictive ensemble. Row outcomes use streams keyed by row id (default: position),
/// so permuting the design together with its ids permutes every simulation.
inline PredictiveEnsemble prior_predictive(Rng& rng, const ModelSpec& spec,
                                           std::span<const PreparedRow> design, int n_sims,
                                           std::span<const std::uint64_t> row_ids = {}) {
  if (n_sims < 1) throw std::invalid_argument("prior_predictive needs at least one simulation");
  if (!row_ids.empty() && row_ids.size() != design.size())
    throw std::invalid_argument("one row id per design row expected");
  const std::uint64_t key = rng();
  PredictiveEnsemble ens;
  for (int s = 0; s < n_sims; ++s) {
    Rng param_rng(key, static_cast<std::uint64_t>(s) + 1, 0xFFFFFFFFull);
    const Params p = sample_prior(param_rng, spec);
    ens.simulations.push_back(
        detail::simulate_keyed(key, static_cast<std::uint64_t>(s), spec, p, design, row_ids));
  }
  return ens;
}

/// Indices of n equally spaced draws out of total.
inline std::vector<std::size_t> thinned_indices(std::size_t total, std::size_t n) {
  if (n == 0 || n > total) throw std::invalid_argument("cannot select that many draws");
  std::vector<std::size_t> idx(n);
  for (std::size_t k = 0; k < n; ++k) idx[k] = k * total / n;
  return idx;
}

/// Posterior predictive ensemble on the dataset's own design.
inline PredictiveEnsemble posterior_predictive(Rng& rng, const ModelSpec& spec, const Draws& draws,
                                               const Dataset& data, int n_sims) {
  detail::require_matching(spec, draws);
  if (n_sims < 1) throw std::invalid_argument("posterior_predictive needs at least one simulation");
  const auto picks = thinned_indices(draws.total(), static_cast<std::size_t>(n_sims));
  const std::uint64_t key = rng();
  PredictiveEnsemble ens;
  for (std::size_t s = 0; s < picks.size(); ++s) {
    const int c = static_cast<int>(picks[s] / static_cast<std::size_t>(draws.n_draws));
    const int i = static_cast<int>(picks[s] % static_cast<std::size_t>(draws.n_draws));
    const Params p = constrain(spec, draws.point(c, i));
    ens.simulations.push_back(detail::simulate_keyed(key, s, spec, p, data.rows, {}));
  }
  std::vector<double> obs;
  for (const auto& row : data.rows) obs.push_back(detail::outcome_of(spec, row));
  ens.observed = std::move(obs);
  return ens;
}

// Adequacy ---------------------------------------------------------------------------

inline constexpr double kAdequacyAlpha = 0.05;
inline constexpr std::array<const char*, 4> kCheckStatistics = {"mean", "sd", "median", "max"};

/// Test statistics of one outcome vector on the log10(1 + count) scale.
inline std::array<double, 4> check_statistics(std::span<const double> counts) {
  std::vector<double> v(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) v[i] = to_check_scale(counts[i]);
  std::array<double, 4> s{};
  s[0] = mean(v);
  s[1] = v.size() > 1 ? sd(v) : 0.0;
  std::sort(v.begin(), v.end());
  s[2] = quantile_sorted(v, 0.5);
  s[3] = v.back();
  return s;
}

/// Two-sided tail probability of `observed` among `simulated`.
inline double tail_probability(std::span<const double> simulated, double observed) {
  if (simulated.empty()) return kNaN;
  std::size_t ge = 0, le = 0;
  for (double s : simulated) {
    ge += s >= observed ? 1 : 0;
    le += s <= observed ? 1 : 0;
  }
  const double n = static_cast<double>(simulated.size());
  return std::min(1.0, 2.0 * std::min(ge / n, le / n));
}

struct StatisticCheck {
  std::string name;
  double observed = 0.0;
  double sim_q05 = 0.0;
  double sim_q50 = 0.0;
  double sim_q95 = 0.0;
  double tail_p = 0.0;
};

/// Density curves on the log10(1 + count) scale, one per simulation plus the observed one.
struct DensityCurves {
  std::vector<double> grid;
  std::vector<std::vector<double>> simulated;
  std::vector<double> observed;
};

struct AdequacyReport {
  std::vector<StatisticCheck> statistics;
  bool pass = false;
  std::vector<std::string> reasons;
  DensityCurves curves;
  std::size_t n_sims = 0;
};

inline DensityCurves density_curves(const PredictiveEnsemble& ens, std::size_t points = 200) {
  DensityCurves out;
  double lo = kInf, hi = -kInf;
  auto scan = [&](const std::vector<double>& v) {
    for (double x : v) {
      const double t = to_check_scale(x);
      if (std::isfinite(t)) {
        lo = std::min(lo, t);
        hi = std::max(hi, t);
      }
    }
  };
  for (const auto& s : ens.simulations) scan(s);
  if (ens.observed) scan(*ens.observed);
  if (!(lo < hi)) {
    lo = std::isfinite(lo) ? lo - 0.5 : 0.0;
    hi = lo + 1.0;
  }
  out.grid = linspace(lo, hi, points);
  auto curve = [&](const std::vector<double>& v) {
    std::vector<double> t;
    t.reserve(v.size());
    for (double x : v)
      if (std::isfinite(to_check_scale(x))) t.push_back(to_check_scale(x));
    return kde(t, out.grid);
  };
  for (const auto& s : ens.simulations) out.simulated.push_back(curve(s));
  if (ens.observed) out.observed = curve(*ens.observed);
  return out;
}

/// Quantitative adequacy verdict: every statistic's tail probability must reach 0.05.
inline AdequacyReport ppc_summary(const PredictiveEnsemble& ens, bool with_curves = true) {
  if (!ens.observed) throw std::invalid_argument("ppc_summary needs the observed outcomes");
  if (ens.simulations.empty()) throw std::invalid_argument("ppc_summary needs simulations");
  for (const auto& s : ens.simulations)
    if (s.size() != ens.observed->size())
      throw std::invalid_argument("simulation length differs from the observed data");
  AdequacyReport r;
  r.n_sims = ens.simulations.size();
  const auto obs = check_statistics(*ens.observed);
  std::array<std::vector<double>, 4> sims;
  for (const auto& s : ens.simulations) {
    const auto st = check_statistics(s);
    for (std::size_t k = 0; k < 4; ++k) sims[k].push_back(st[k]);
  }
  for (std::size_t k = 0; k < 4; ++k) {
    StatisticCheck c;
    c.name = kCheckStatistics[k];
    c.observed = obs[k];
    c.tail_p = tail_probability(sims[k], obs[k]);
    std::vector<double> sorted = sims[k];
    std::sort(sorted.begin(), sorted.end());
    c.sim_q05 = quantile_sorted(sorted, 0.05);
    c.sim_q50 = quantile_sorted(sorted, 0.5);
    c.sim_q95 = quantile_sorted(sorted, 0.95);
    if (!(c.tail_p >= kAdequacyAlpha))
      r.reasons.push_back(c.name + ": tail probability " + csv::format_fixed(c.tail_p, 3) + " < 0.05");
    r.statistics.push_back(c);
  }
  r.pass = r.reasons.empty();
  if (with_curves) r.curves = density_curves(ens);
  return r;
}

/// Coarse plausibility numbers for a prior predictive ensemble.
struct EnsembleSummary {
  double max = 0.0;
  double pooled_q99 = 0.0;
  double fraction_above_1e6 = 0.0;
  double median_of_sim_means = 0.0;
};

inline EnsembleSummary summarize_ensemble(const PredictiveEnsemble& ens) {
  EnsembleSummary s;
  std::vector<double> pooled, means;
  std::size_t above = 0;
  for (const auto& sim : ens.simulations) {
    pooled.insert(pooled.end(), sim.begin(), sim.end());
    means.push_back(mean(sim));
    for (double x : sim) above += x > 1e6 ? 1 : 0;
  }
  if (pooled.empty()) return s;
  std::sort(pooled.begin(), pooled.end());
  s.max = pooled.back();
  s.pooled_q99 = quantile_sorted(pooled, 0.99);
  s.fraction_above_1e6 = static_cast<double>(above) / static_cast<double>(pooled.size());
  s.median_of_sim_means = median(means);
  return s;
}

// Simulation-based calibration --------------------------------------------------------

struct SbcConfig {
  int n_iterations = 200;
  int n_posterior = 100;  // M: thinned posterior draws ranked against
  int thin = 4;
  int n_bins = 20;
  std::uint64_t seed = 1;
  int threads = 0;
  /// Per-fit settings; n_draws is derived as M * thin / n_chains.
  SamplerConfig sampler = [] {
    SamplerConfig s;
    s.n_chains = 1;
    s.n_warmup = 500;
    return s;
  }();
  /// Doubles the location (NB rate, or mu for the toy) when simulating data only.
  bool fault_injection = false;

  void validate() const {
    if (n_iterations < 1 || n_posterior < 1 || thin < 1 || n_bins < 2)
      throw std::invalid_argument("SBC counts must be positive (at least 2 bins)");
    if ((n_posterior * thin) % sampler.n_chains != 0)
      throw std::invalid_argument("posterior draws * thinning must divide evenly across chains");
  }
};

struct SbcIteration {
  bool ok = false;
  std::string error;
  int divergences = 0;
  bool diagnostics_pass = false;  // no divergent transitions
};

struct SbcResult {
  std::vector<std::string> names;
  int n_posterior = 0;
  int n_bins = 0;
  std::vector<std::vector<int>> ranks;  // [parameter][successful iteration]
  std::vector<std::vector<int>> bins;   // [parameter][bin]
  std::vector<double> chi_square;
  std::vector<double> p_value;
  std::vector<SbcIteration> iterations;

  [[nodiscard]] std::size_t n_ok() const { return ranks.empty() ? 0 : ranks.front().size(); }
  [[nodiscard]] double min_p() const {
    double m = kInf;
    for (double p : p_value) m = std::min(m, p);
    return m;
  }
};

/// Bin for a rank in 0..m when m + 1 rank values are spread over n_bins bins.
inline int rank_bin(int rank, int m, int n_bins) {
  return static_cast<int>(static_cast<long long>(rank) * n_bins / (m + 1));
}

/// Chi-square uniformity test of ranks in 0..m; expected counts follow the exact number
/// of rank values mapped to each bin.
inline std::pair<double, double> rank_chi_square(std::span<const int> ranks, int m, int n_bins,
                                                 std::vector<int>* counts_out = nullptr) {
  std::vector<int> counts(static_cast<std::size_t>(n_bins), 0);
  std::vector<int> width(static_cast<std::size_t>(n_bins), 0);
  for (int r = 0; r <= m; ++r) ++width[static_cast<std::size_t>(rank_bin(r, m, n_bins))];
  for (int r : ranks) ++counts[static_cast<std::size_t>(rank_bin(r, m, n_bins))];
  const double n = static_cast<double>(ranks.size());
  double chi = 0.0;
  int used = 0;
  for (int b = 0; b < n_bins; ++b) {
    if (width[b] == 0) continue;
    ++used;
    const double expected = n * width[b] / static_cast<double>(m + 1);
    chi += (counts[b] - expected) * (counts[b] - expected) / expected;
  }
  if (counts_out) *counts_out = counts;
  if (ranks.empty() || used < 2) return {kNaN, kNaN};
  const boost::math::chi_squared dist(used - 1);
  return {chi, boost::math::cdf(boost::math::complement(dist, chi))};
}

inline SbcResult sbc(const SbcConfig& config, const ModelSpec& spec,
                     std::span<const PreparedRow> design) {
  config.validate();
  const std::vector<std::string> names = parameter_names(spec);
  const std::size_t n_par = names.size();
  const auto n_iter = static_cast<std::size_t>(config.n_iterations);
  std::vector<std::vector<int>> ranks(n_iter);
  std::vector<SbcIteration> records(n_iter);

  detail::parallel_for(config.n_iterations, config.threads, [&](int it) {
    Rng rng(config.seed, static_cast<std::uint64_t>(it), 0x5BC);
    const Params truth = sample_prior(rng, spec);
    Params generator = truth;
    if (config.fault_injection) {
      if (spec.is_toy()) generator.mu *= 2.0;
      else generator.alpha += std::log(2.0);
    }
    Dataset data;
    data.rows.assign(design.begin(), design.end());
    data.language_names.resize(static_cast<std::size_t>(std::max(1, spec.n_languages)));
    data.project_names.resize(static_cast<std::size_t>(std::max(1, spec.n_projects)));
    const auto y = simulate_outcomes(rng, spec, generator, data.rows);
    SbcIteration& rec = records[static_cast<std::size_t>(it)];
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (spec.is_toy()) {
        data.rows[i].height = y[i];
      } else {
        if (!(y[i] < 9.0e18)) {
          rec.error = "simulated count exceeds the integer range";
          return;
        }
        data.rows[i].bugs = static_cast<std::int64_t>(y[i]);
      }
    }
    SamplerConfig sc = config.sampler;
    sc.threads = 1;
    sc.n_draws = config.n_posterior * config.thin / sc.n_chains;
    sc.seed = config.seed ^ (0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(it) + 1));
    Draws draws;
    try {
      draws = fit(spec, data, sc);
    } catch (const std::exception& e) {
      rec.error = e.what();
      return;
    }
    rec.ok = true;
    rec.divergences = draws.divergences();
    const auto truth_flat = flatten(spec, truth);
    std::vector<int> r(n_par, 0);
    for (std::size_t k = 0; k < draws.total(); k += static_cast<std::size_t>(config.thin)) {
      const int c = static_cast<int>(k / static_cast<std::size_t>(draws.n_draws));
      const int i = static_cast<int>(k % static_cast<std::size_t>(draws.n_draws));
      const auto flat = flatten(spec, constrain(spec, draws.point(c, i)));
      for (std::size_t j = 0; j < n_par; ++j) r[j] += flat[j] < truth_flat[j] ? 1 : 0;
    }
    rec.diagnostics_pass = rec.divergences == 0;
    ranks[static_cast<std::size_t>(it)] = std::move(r);
  });

  SbcResult out;
  out.names = names;
  out.n_posterior = config.n_posterior;
  out.n_bins = config.n_bins;
  out.iterations = records;
  out.ranks.assign(n_par, {});
  for (std::size_t it = 0; it < n_iter; ++it) {
    if (!records[it].ok) continue;
    for (std::size_t j = 0; j < n_par; ++j) out.ranks[j].push_back(ranks[it][j]);
  }
  for (std::size_t j = 0; j < n_par; ++j) {
    std::vector<int> counts;
    const auto [chi, p] = rank_chi_square(out.ranks[j], config.n_posterior, config.n_bins, &counts);
    out.bins.push_back(std::move(counts));
    out.chi_square.push_back(chi);
    out.p_value.push_back(p);
  }
  return out;
}

}  // namespace bayeswork
