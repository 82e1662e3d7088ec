#pragma once

// Convergence diagnostics: split R-hat, bulk effective sample size and the
// pass/fail verdict over a set of draws.

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "bayeswork/math.hpp"
#include "bayeswork/model.hpp"
#include "bayeswork/sampler.hpp"

namespace bayeswork {

inline constexpr double kRhatThreshold = 1.01;
inline constexpr double kEssRatioThreshold = 0.10;

/// Draws mapped to named natural-scale parameters (or raw coordinates without a spec).
struct NamedSamples {
  std::vector<std::string> names;
  int n_chains = 0;
  int n_draws = 0;
  std::vector<double> values;  // ((c * n_draws + i) * names.size() + j)

  [[nodiscard]] std::size_t width() const { return names.size(); }
  [[nodiscard]] double at(int c, int i, std::size_t j) const {
    return values[(static_cast<std::size_t>(c) * n_draws + i) * width() + j];
  }
  [[nodiscard]] std::vector<std::vector<double>> chains_of(std::size_t j) const {
    std::vector<std::vector<double>> out(static_cast<std::size_t>(n_chains));
    for (int c = 0; c < n_chains; ++c)
      for (int i = 0; i < n_draws; ++i) out[c].push_back(at(c, i, j));
    return out;
  }
  /// All draws of parameter j, chains concatenated.
  [[nodiscard]] std::vector<double> column(std::size_t j) const {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(n_chains) * n_draws);
    for (int c = 0; c < n_chains; ++c)
      for (int i = 0; i < n_draws; ++i) out.push_back(at(c, i, j));
    return out;
  }
  [[nodiscard]] std::size_t index_of(const std::string& name) const {
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return static_cast<std::size_t>(it - names.begin());
  }
};

inline NamedSamples named_samples(const Draws& draws) {
  NamedSamples out;
  out.n_chains = draws.n_chains;
  out.n_draws = draws.n_draws;
  if (!draws.spec) {
    for (int d = 0; d < draws.dim; ++d) out.names.push_back("u[" + std::to_string(d) + "]");
    out.values = draws.values;
    return out;
  }
  out.names = parameter_names(*draws.spec);
  out.values.reserve(draws.total() * out.names.size());
  for (int c = 0; c < draws.n_chains; ++c)
    for (int i = 0; i < draws.n_draws; ++i) {
      const auto flat = flatten(*draws.spec, constrain(*draws.spec, draws.point(c, i)));
      out.values.insert(out.values.end(), flat.begin(), flat.end());
    }
  return out;
}

namespace detail {

inline std::vector<std::vector<double>> split_chains(const std::vector<std::vector<double>>& chains) {
  std::vector<std::vector<double>> halves;
  for (const auto& c : chains) {
    const std::size_t half = c.size() / 2;
    halves.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    // odd lengths drop the middle draw
    halves.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
  }
  return halves;
}

/// Biased autocovariance (divided by n) for lags 0..n-1 via zero-padded FFT.
inline std::vector<double> autocovariance(const std::vector<double>& x) {
  const std::size_t n = x.size();
  const double m = mean(x);
  std::size_t len = 1;
  while (len < 2 * n) len <<= 1;
  std::vector<double> padded(len, 0.0);
  for (std::size_t i = 0; i < n; ++i) padded[i] = x[i] - m;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> freq;
  fft.fwd(freq, padded);
  for (auto& f : freq) f = std::complex<double>(std::norm(f), 0.0);
  std::vector<double> back;
  fft.inv(back, freq);
  std::vector<double> acov(n);
  for (std::size_t t = 0; t < n; ++t) acov[t] = back[t] / static_cast<double>(n);
  return acov;
}

inline bool all_equal(const std::vector<std::vector<double>>& chains) {
  for (const auto& c : chains)
    for (double v : c)
      if (v != chains.front().front()) return false;
  return true;
}

}  // namespace detail

/// Split R-hat over chains of equal length. NaN with fewer than 2 chains or 4 draws;
/// 1 when every draw is identical.
inline double split_rhat(const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2 || chains.front().size() < 4) return kNaN;
  if (detail::all_equal(chains)) return 1.0;
  const auto halves = detail::split_chains(chains);
  const double n = static_cast<double>(halves.front().size());
  std::vector<double> means, vars;
  for (const auto& h : halves) {
    means.push_back(mean(h));
    vars.push_back(variance(h));
  }
  const double w = mean(vars);
  const double b = n * variance(means);
  if (w == 0.0) return kInf;
  return std::sqrt(((n - 1.0) / n * w + b / n) / w);
}

/// Bulk ESS on split chains with Geyer's initial monotone positive sequence.
/// A constant input returns the draw count.
inline double ess(const std::vector<std::vector<double>>& chains) {
  if (chains.empty() || chains.front().size() < 4) return kNaN;
  std::size_t total = 0;
  for (const auto& c : chains) total += c.size();
  if (detail::all_equal(chains)) return static_cast<double>(total);
  const auto halves = detail::split_chains(chains);
  const std::size_t m = halves.size();
  const std::size_t n = halves.front().size();
  const double nd = static_cast<double>(n);

  std::vector<std::vector<double>> acov(m);
  std::vector<double> chain_mean(m), chain_var(m);
  for (std::size_t c = 0; c < m; ++c) {
    acov[c] = detail::autocovariance(halves[c]);
    chain_mean[c] = mean(halves[c]);
    chain_var[c] = acov[c][0] * nd / (nd - 1.0);
  }
  const double mean_var = mean(chain_var);
  double var_plus = mean_var * (nd - 1.0) / nd;
  if (m > 1) var_plus += variance(chain_mean);
  if (!(var_plus > 0.0)) return static_cast<double>(total);

  auto acov_mean = [&](std::size_t t) {
    double acc = 0.0;
    for (std::size_t c = 0; c < m; ++c) acc += acov[c][t];
    return acc / static_cast<double>(m);
  };
  std::vector<double> rho(n, 0.0);
  rho[0] = 1.0;
  double rho_even = 1.0;
  double rho_odd = 1.0 - (mean_var - acov_mean(1)) / var_plus;
  rho[1] = rho_odd;
  std::size_t t = 1;
  while (t + 5 < n && rho_even + rho_odd > 0.0) {
    rho_even = 1.0 - (mean_var - acov_mean(t + 1)) / var_plus;
    rho_odd = 1.0 - (mean_var - acov_mean(t + 2)) / var_plus;
    if (rho_even + rho_odd >= 0.0) {
      rho[t + 1] = rho_even;
      rho[t + 2] = rho_odd;
    }
    t += 2;
  }
  const std::size_t max_t = t;
  if (rho_even > 0.0 && max_t + 1 < n) rho[max_t + 1] = rho_even;
  // initial monotone sequence
  for (t = 1; t + 2 <= max_t; t += 2) {
    if (rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]) {
      rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0;
      rho[t + 2] = rho[t + 1];
    }
  }
  const double draws = static_cast<double>(m * n);
  double tau = -1.0;
  for (std::size_t k = 0; k <= max_t && k < n; ++k) tau += 2.0 * rho[k];
  if (max_t + 1 < n) tau += rho[max_t + 1];
  tau = std::max(tau, 1.0 / std::log10(draws));
  return draws / tau;
}

struct ParameterDiagnostic {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q05 = 0.0;
  double q50 = 0.0;
  double q95 = 0.0;
  double rhat = kNaN;
  double ess = kNaN;
  double ess_ratio = kNaN;
  bool degenerate = false;  // all draws identical
};

struct ChainDiagnostic {
  double step_size = 0.0;
  double mean_accept = 0.0;
  int divergences = 0;
  int max_depth_hits = 0;
  double energy_mean = 0.0;
  double energy_sd = 0.0;
  double ebfmi = kNaN;  // energy Bayesian fraction of missing information
};

struct Diagnostics {
  std::vector<ParameterDiagnostic> parameters;
  std::vector<ChainDiagnostic> chains;
  std::size_t total_draws = 0;
  int divergences = 0;
  double max_rhat = kNaN;
  double min_ess = kNaN;
  double min_ess_ratio = kNaN;
  bool pass = false;
  std::vector<std::string> reasons;   // why the verdict failed
  std::vector<std::string> warnings;  // informational

  [[nodiscard]] const ParameterDiagnostic& parameter(const std::string& name) const {
    for (const auto& p : parameters)
      if (p.name == name) return p;
    throw std::out_of_range("unknown parameter '" + name + "'");
  }
};

/// Applies the verdict rule to already computed fields.
inline void apply_verdict(Diagnostics& d) {
  d.reasons.clear();
  d.max_rhat = -kInf;
  d.min_ess = kInf;
  d.min_ess_ratio = kInf;
  bool rhat_missing = false;
  for (const auto& p : d.parameters) {
    if (std::isnan(p.rhat)) rhat_missing = true;
    else d.max_rhat = std::max(d.max_rhat, p.rhat);
    if (!std::isnan(p.ess)) {
      d.min_ess = std::min(d.min_ess, p.ess);
      d.min_ess_ratio = std::min(d.min_ess_ratio, p.ess_ratio);
    }
  }
  if (d.parameters.empty() || rhat_missing) {
    d.max_rhat = kNaN;
    d.reasons.emplace_back("rhat unavailable (needs at least 2 chains of 4 draws)");
  } else if (!(d.max_rhat < kRhatThreshold)) {
    d.reasons.emplace_back("rhat: max " + csv::format_fixed(d.max_rhat, 4) + " >= 1.01");
  }
  if (!(d.min_ess_ratio >= kEssRatioThreshold))
    d.reasons.emplace_back("ess: min ratio " + csv::format_fixed(d.min_ess_ratio, 4) + " < 0.10");
  if (d.divergences > 0)
    d.reasons.emplace_back("divergences: " + std::to_string(d.divergences));
  d.pass = d.reasons.empty();
}

inline Diagnostics diagnose(const Draws& draws) {
  Diagnostics d;
  d.total_draws = draws.total();
  const NamedSamples s = named_samples(draws);
  for (std::size_t j = 0; j < s.width(); ++j) {
    ParameterDiagnostic p;
    p.name = s.names[j];
    const auto chains = s.chains_of(j);
    auto all = s.column(j);
    p.mean = mean(all);
    p.sd = all.size() > 1 ? sd(all) : 0.0;
    std::sort(all.begin(), all.end());
    p.q05 = quantile_sorted(all, 0.05);
    p.q50 = quantile_sorted(all, 0.5);
    p.q95 = quantile_sorted(all, 0.95);
    p.degenerate = detail::all_equal(chains);
    p.rhat = split_rhat(chains);
    p.ess = ess(chains);
    p.ess_ratio = p.ess / static_cast<double>(d.total_draws);
    if (p.degenerate) d.warnings.push_back(p.name + ": all draws identical; ESS set to draw count");
    d.parameters.push_back(std::move(p));
  }
  for (int c = 0; c < draws.n_chains; ++c) {
    ChainDiagnostic cd;
    if (static_cast<std::size_t>(c) < draws.step_size.size()) cd.step_size = draws.step_size[c];
    std::vector<double> energy;
    double accept = 0.0;
    for (int i = 0; i < draws.n_draws; ++i) {
      const auto& st = draws.stat(c, i);
      accept += st.accept_stat;
      cd.divergences += st.divergent ? 1 : 0;
      cd.max_depth_hits += st.tree_depth >= 10 ? 1 : 0;
      energy.push_back(st.energy);
    }
    cd.mean_accept = accept / draws.n_draws;
    cd.energy_mean = mean(energy);
    cd.energy_sd = energy.size() > 1 ? sd(energy) : 0.0;
    if (energy.size() > 1) {
      double num = 0.0;
      for (std::size_t i = 1; i < energy.size(); ++i)
        num += (energy[i] - energy[i - 1]) * (energy[i] - energy[i - 1]);
      const double den = variance(energy) * static_cast<double>(energy.size() - 1);
      cd.ebfmi = den > 0 ? num / den : kNaN;
    }
    d.divergences += cd.divergences;
    d.chains.push_back(cd);
  }
  if (draws.n_chains < 2) d.warnings.emplace_back("single chain: R-hat unavailable");
  apply_verdict(d);
  return d;
}

}  // namespace bayeswork
