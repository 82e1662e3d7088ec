#pragma once

// Pareto-smoothed importance sampling leave-one-out cross-validation, WAIC and
// the model comparison table.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "bayeswork/math.hpp"
#include "bayeswork/model.hpp"
#include "bayeswork/sampler.hpp"

namespace bayeswork {

inline constexpr double kParetoKThreshold = 0.7;
inline constexpr std::size_t kMinTailSamples = 5;
inline constexpr std::size_t kMinLooDraws = 100;

/// Pointwise log-likelihood, one row per posterior draw and one column per data row.
struct LogLikMatrix {
  std::size_t n_draws = 0;
  std::size_t n_rows = 0;
  std::vector<double> values;  // (s * n_rows + i)
  std::vector<std::pair<int, int>> provenance;  // (chain, iteration) per draw

  [[nodiscard]] double at(std::size_t s, std::size_t i) const { return values[s * n_rows + i]; }
  [[nodiscard]] std::vector<double> column(std::size_t i) const {
    std::vector<double> c(n_draws);
    for (std::size_t s = 0; s < n_draws; ++s) c[s] = at(s, i);
    return c;
  }
};

inline LogLikMatrix pointwise_loglik(const ModelSpec& spec, const Draws& draws, const Dataset& data,
                                     int threads = 0) {
  if (draws.dim != dim(spec)) throw std::invalid_argument("draws do not match the model");
  const Posterior post(spec, data);
  LogLikMatrix m;
  m.n_draws = draws.total();
  m.n_rows = data.size();
  m.values.resize(m.n_draws * m.n_rows);
  for (int c = 0; c < draws.n_chains; ++c)
    for (int i = 0; i < draws.n_draws; ++i) m.provenance.emplace_back(c, i);
  detail::parallel_for(draws.n_chains, threads, [&](int c) {
    for (int i = 0; i < draws.n_draws; ++i) {
      const auto ll = post.pointwise(draws.point(c, i));
      const std::size_t s = static_cast<std::size_t>(c) * draws.n_draws + i;
      std::copy(ll.begin(), ll.end(), m.values.begin() + static_cast<std::ptrdiff_t>(s * m.n_rows));
    }
  });
  for (double v : m.values)
    if (!std::isfinite(v)) throw std::domain_error("non-finite pointwise log-likelihood");
  return m;
}

struct GpdFit {
  double k = kNaN;
  double sigma = kNaN;
  bool degenerate = false;    // constant input; k is -inf
  bool insufficient = false;  // fewer than 5 samples
};

/// Generalized Pareto fit (Zhang and Stephens profile posterior mean), with the weakly
/// informative shrinkage of k toward 0.5. Positive k means a heavier tail.
inline GpdFit gpd_fit(std::vector<double> x) {
  GpdFit fit;
  if (x.size() < kMinTailSamples) {
    fit.insufficient = true;
    return fit;
  }
  std::sort(x.begin(), x.end());
  if (x.back() - x.front() <= 0.0) {
    fit.degenerate = true;
    fit.k = -kInf;
    return fit;
  }
  const std::size_t n = x.size();
  const double prior = 3.0;
  const std::size_t m = 30 + static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
  const double xstar = x[static_cast<std::size_t>(std::floor(n / 4.0 + 0.5)) - 1];
  std::vector<double> theta(m), l_theta(m);
  for (std::size_t j = 0; j < m; ++j) {
    theta[j] = 1.0 / x[n - 1] +
               (1.0 - std::sqrt(static_cast<double>(m) / (static_cast<double>(j + 1) - 0.5))) / prior / xstar;
    const double a = -theta[j];
    double k = 0.0;
    for (double xi : x) k += std::log1p(a * xi);
    k /= static_cast<double>(n);
    l_theta[j] = static_cast<double>(n) * (std::log(a / k) - k - 1.0);
  }
  const double lse = log_sum_exp(l_theta);
  double theta_hat = 0.0;
  for (std::size_t j = 0; j < m; ++j) theta_hat += theta[j] * std::exp(l_theta[j] - lse);
  double k = 0.0;
  for (double xi : x) k += std::log1p(-theta_hat * xi);
  k /= static_cast<double>(n);
  double sigma = -k / theta_hat;
  const double a = 10.0;
  k = k * static_cast<double>(n) / (static_cast<double>(n) + a) + a * 0.5 / (static_cast<double>(n) + a);
  if (std::isnan(sigma)) sigma = kInf;
  fit.k = k;
  fit.sigma = sigma;
  return fit;
}

/// Quantile function of the generalized Pareto distribution (location 0).
inline double gpd_quantile(double p, double k, double sigma) {
  if (k == 0.0) return -sigma * std::log1p(-p);
  return sigma * std::expm1(-k * std::log1p(-p)) / k;
}

struct PsisResult {
  std::vector<double> log_weights;  // normalized: log-sum-exp is 0
  double k = kNaN;
  bool degenerate = false;
  bool insufficient = false;
};

inline std::size_t psis_tail_length(std::size_t s) {
  const double sd = static_cast<double>(s);
  return static_cast<std::size_t>(std::ceil(std::min(0.2 * sd, 3.0 * std::sqrt(sd))));
}

/// Pareto-smoothed log importance weights.
inline PsisResult psis_smooth(std::span<const double> log_ratios) {
  const std::size_t s = log_ratios.size();
  if (s < 2) throw std::invalid_argument("PSIS needs at least two draws");
  PsisResult out;
  const double max_lr = *std::max_element(log_ratios.begin(), log_ratios.end());
  std::vector<double> lw(log_ratios.begin(), log_ratios.end());
  for (double& v : lw) v -= max_lr;

  const std::size_t tail = std::min(psis_tail_length(s), s - 1);
  if (tail < kMinTailSamples) {
    out.insufficient = true;
  } else {
    std::vector<std::size_t> order(s);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lw[a] < lw[b]; });
    const std::size_t first = s - tail;
    const double tail_lo = lw[order[first]];
    const double tail_hi = lw[order[s - 1]];
    if (std::abs(tail_hi - tail_lo) < std::numeric_limits<double>::epsilon() / 100.0) {
      out.degenerate = true;
      out.k = -kInf;
    } else {
      const double cutoff = lw[order[first - 1]];
      const double exp_cutoff = std::exp(cutoff);
      std::vector<double> excess(tail);
      for (std::size_t t = 0; t < tail; ++t) excess[t] = std::exp(lw[order[first + t]]) - exp_cutoff;
      const GpdFit fit = gpd_fit(excess);
      out.k = fit.k;
      if (std::isfinite(fit.k)) {
        for (std::size_t t = 0; t < tail; ++t) {
          const double p = (static_cast<double>(t) + 0.5) / static_cast<double>(tail);
          lw[order[first + t]] = std::log(gpd_quantile(p, fit.k, fit.sigma) + exp_cutoff);
        }
      }
    }
  }
  for (double& v : lw) v = std::min(v, 0.0);  // truncate at the largest raw weight
  const double norm = log_sum_exp(lw);
  for (double& v : lw) v -= norm;
  out.log_weights = std::move(lw);
  return out;
}

struct LooResult {
  double elpd_loo = 0.0;
  double se_elpd = 0.0;
  double p_loo = 0.0;
  std::vector<double> pointwise;  // elpd_i
  std::vector<double> lpd;        // in-sample log predictive density per row
  std::vector<double> pareto_k;
  std::vector<bool> high_k;       // k > 0.7, or smoothing impossible
  [[nodiscard]] std::size_t n_high_k() const {
    return static_cast<std::size_t>(std::count(high_k.begin(), high_k.end(), true));
  }
};

namespace detail {

inline double sum_se(std::span<const double> pointwise) {
  const double n = static_cast<double>(pointwise.size());
  return pointwise.size() > 1 ? std::sqrt(n * variance(pointwise)) : 0.0;
}

inline void require_draws(const LogLikMatrix& ll) {
  if (ll.n_draws < kMinLooDraws)
    throw std::invalid_argument("degenerate input: at least 100 posterior draws are required, got " +
                                std::to_string(ll.n_draws));
  if (ll.n_rows == 0) throw std::invalid_argument("degenerate input: no data rows");
}

}  // namespace detail

inline LooResult loo(const LogLikMatrix& ll, int threads = 0) {
  detail::require_draws(ll);
  LooResult r;
  const std::size_t n = ll.n_rows;
  r.pointwise.resize(n);
  r.lpd.resize(n);
  r.pareto_k.resize(n);
  r.high_k.resize(n);
  std::vector<char> high(n, 0);
  const double log_s = std::log(static_cast<double>(ll.n_draws));
  detail::parallel_for(static_cast<int>(n), threads, [&](int col) {
    const auto i = static_cast<std::size_t>(col);
    const auto c = ll.column(i);
    std::vector<double> ratios(c.size());
    for (std::size_t s = 0; s < c.size(); ++s) ratios[s] = -c[s];
    const PsisResult w = psis_smooth(ratios);
    std::vector<double> terms(c.size());
    for (std::size_t s = 0; s < c.size(); ++s) terms[s] = w.log_weights[s] + c[s];
    r.pointwise[i] = log_sum_exp(terms);
    r.lpd[i] = log_sum_exp(c) - log_s;
    r.pareto_k[i] = w.k;
    high[i] = (w.insufficient || w.k > kParetoKThreshold) ? 1 : 0;
  });
  for (std::size_t i = 0; i < n; ++i) {
    r.high_k[i] = high[i] != 0;
    r.elpd_loo += r.pointwise[i];
    r.p_loo += r.lpd[i] - r.pointwise[i];
  }
  r.se_elpd = detail::sum_se(r.pointwise);
  return r;
}

struct WaicResult {
  double elpd_waic = 0.0;
  double se = 0.0;
  double p_waic = 0.0;
  std::vector<double> pointwise;
};

inline WaicResult waic(const LogLikMatrix& ll) {
  detail::require_draws(ll);
  WaicResult w;
  const double log_s = std::log(static_cast<double>(ll.n_draws));
  for (std::size_t i = 0; i < ll.n_rows; ++i) {
    const auto c = ll.column(i);
    const double lpd = log_sum_exp(c) - log_s;
    const double v = variance(c);
    w.pointwise.push_back(lpd - v);
    w.elpd_waic += lpd - v;
    w.p_waic += v;
  }
  w.se = detail::sum_se(w.pointwise);
  return w;
}

struct ComparisonRow {
  std::string model;
  int rank = 0;
  double elpd_loo = 0.0;
  double se_elpd = 0.0;
  double p_loo = 0.0;
  std::size_t n_high_k = 0;
  /// Relative to the immediately better model (unset for the best model).
  std::optional<double> elpd_diff;
  std::optional<double> se_diff;
  /// Relative to the best model.
  std::optional<double> elpd_diff_best;
  std::optional<double> se_diff_best;
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;
};

struct NamedLoo {
  std::string name;
  LooResult result;
};

inline ComparisonTable compare(const std::vector<NamedLoo>& results) {
  if (results.empty()) throw std::invalid_argument("nothing to compare");
  const std::size_t n = results.front().result.pointwise.size();
  for (const auto& r : results)
    if (r.result.pointwise.size() != n)
      throw std::invalid_argument("results were computed on different numbers of rows");
  std::vector<std::size_t> order(results.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (results[a].result.elpd_loo != results[b].result.elpd_loo)
      return results[a].result.elpd_loo > results[b].result.elpd_loo;
    return results[a].name < results[b].name;
  });
  auto diff = [&](const LooResult& worse, const LooResult& better) {
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = worse.pointwise[i] - better.pointwise[i];
    return std::pair{worse.elpd_loo - better.elpd_loo, detail::sum_se(d)};
  };
  ComparisonTable t;
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const auto& r = results[order[pos]];
    ComparisonRow row;
    row.model = r.name;
    row.rank = static_cast<int>(pos) + 1;
    row.elpd_loo = r.result.elpd_loo;
    row.se_elpd = r.result.se_elpd;
    row.p_loo = r.result.p_loo;
    row.n_high_k = r.result.n_high_k();
    if (pos > 0) {
      const auto [d, se] = diff(r.result, results[order[pos - 1]].result);
      row.elpd_diff = d;
      row.se_diff = se;
      const auto [db, seb] = diff(r.result, results[order[0]].result);
      row.elpd_diff_best = db;
      row.se_diff_best = seb;
    }
    t.rows.push_back(row);
  }
  return t;
}

}  // namespace bayeswork
