#pragma once

// Scalar densities and small numeric helpers shared by every module.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/digamma.hpp>

namespace bayeswork {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
inline constexpr double kLogSqrtTwoPi = 0.91893853320467274178;

inline double log_sum_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

inline double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) return -kInf;
  const double m = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - m);
  return m + std::log(acc);
}

/// log(1 + exp(x)) without overflow.
inline double log1p_exp(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// Logistic function 1 / (1 + exp(-x)).
inline double inv_logit(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Digamma in plain double precision (Boost would otherwise promote to long double).
inline double digamma(double x) {
  using Policy = boost::math::policies::policy<boost::math::policies::promote_double<false>>;
  return boost::math::digamma(x, Policy());
}

inline double normal_lpdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return -0.5 * z * z - std::log(sigma) - kLogSqrtTwoPi;
}

inline double weibull_lpdf(double x, double shape, double scale) {
  if (x < 0) return -kInf;
  const double r = x / scale;
  return std::log(shape / scale) + (shape - 1.0) * std::log(r) - std::pow(r, shape);
}

/// Gamma density with shape/rate parameterization.
inline double gamma_lpdf(double x, double shape, double rate) {
  if (x <= 0) return -kInf;
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

/// Cauchy truncated to x > location.
inline double half_cauchy_lpdf(double x, double location, double scale) {
  if (x < location) return -kInf;
  const double z = (x - location) / scale;
  return std::log(2.0) - std::log(std::numbers::pi * scale) - std::log1p(z * z);
}

inline double weibull_pdf(double x, double shape, double scale) {
  return x < 0 ? 0.0 : std::exp(weibull_lpdf(x, shape, scale));
}

/// Negative binomial (mean/dispersion form) with the rate given on the log scale.
/// Mean exp(log_rate), variance mean + mean^2 / phi.
inline double nb_logpmf_log_rate(double y, double log_rate, double phi) {
  const double log_phi = std::log(phi);
  const double log_denom = log_sum_exp(log_phi, log_rate);  // log(phi + lambda)
  double lp = phi * (log_phi - log_denom);
  if (y > 0) {
    lp += std::lgamma(y + phi) - std::lgamma(phi) - std::lgamma(y + 1.0) +
          y * (log_rate - log_denom);
  }
  return lp;
}

inline double nb_logpmf(double y, double lambda, double phi) {
  if (!(y >= 0) || !std::isfinite(y) || !(lambda > 0) || !std::isfinite(lambda) ||
      !(phi > 0) || !std::isfinite(phi)) {
    throw std::domain_error("nb_logpmf: requires y >= 0, lambda > 0, phi > 0 (all finite)");
  }
  return nb_logpmf_log_rate(y, std::log(lambda), phi);
}

/// d/d(log_rate) and d/d(phi) of nb_logpmf_log_rate.
struct NbGradient {
  double d_log_rate;
  double d_phi;
};

inline NbGradient nb_logpmf_gradient(double y, double log_rate, double phi) {
  const double log_phi = std::log(phi);
  // lambda / (lambda + phi) and phi / (lambda + phi)
  const double w_rate = inv_logit(log_rate - log_phi);
  const double w_phi = inv_logit(log_phi - log_rate);
  const double log_denom = log_sum_exp(log_phi, log_rate);
  NbGradient g{};
  g.d_log_rate = y * w_phi - phi * w_rate;
  g.d_phi = (log_phi - log_denom) + w_rate - y * std::exp(-log_denom);
  if (y > 0) g.d_phi += digamma(y + phi) - digamma(phi);
  return g;
}

/// Log normalizing constant of the LKJ density over K x K correlation matrices:
/// density = det(R)^(eta-1) / c_K(eta), this returns log c_K(eta).
inline double lkj_log_normalizer(int dim, double eta) {
  double log_c = 0.0;
  for (int k = 1; k < dim; ++k) {
    const double b = eta + 0.5 * (dim - k - 1);
    log_c += (2.0 * eta - 2.0 + dim - k) * (dim - k) * std::log(2.0);
    log_c += (dim - k) * std::log(boost::math::beta(b, b));
  }
  return log_c;
}

// Sample statistics ---------------------------------------------------------

inline double mean(std::span<const double> xs) {
  if (xs.empty()) return kNaN;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

/// Unbiased (n - 1) sample variance.
inline double variance(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - m) * (x - m);
  return acc / static_cast<double>(xs.size() - 1);
}

inline double sd(std::span<const double> xs) { return std::sqrt(variance(xs)); }

/// Type-7 (linear interpolation) quantile of already sorted data.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("quantile probability outside [0, 1]");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double quantile(std::vector<double> xs, double p) {
  std::sort(xs.begin(), xs.end());
  return quantile_sorted(xs, p);
}

inline double median(std::vector<double> xs) { return quantile(std::move(xs), 0.5); }

/// Gaussian kernel density estimate evaluated on a grid (Silverman bandwidth).
inline std::vector<double> kde(std::span<const double> samples, std::span<const double> grid,
                               double bandwidth = 0.0) {
  std::vector<double> out(grid.size(), 0.0);
  const auto n = static_cast<double>(samples.size());
  if (samples.empty()) return out;
  if (bandwidth <= 0.0) {
    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    double spread = sd(samples);
    if (iqr > 0) spread = std::min(spread, iqr / 1.34);
    if (!(spread > 0)) spread = 1e-3 * std::max(1.0, std::abs(sorted.front()));
    bandwidth = 0.9 * spread * std::pow(n, -0.2);
  }
  const double norm = 1.0 / (n * bandwidth * std::sqrt(2.0 * std::numbers::pi));
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double acc = 0.0;
    for (double s : samples) {
      const double z = (grid[g] - s) / bandwidth;
      acc += std::exp(-0.5 * z * z);
    }
    out[g] = acc * norm;
  }
  return out;
}

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> out(n);
  if (n == 1) {
    out[0] = lo;
    return out;
  }
  for (std::size_t i = 0; i < n; ++i)
    out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return out;
}

/// Trapezoid rule over a (possibly nonuniform) grid.
inline double trapezoid(std::span<const double> x, std::span<const double> y) {
  double acc = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) acc += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
  return acc;
}

}  // namespace bayeswork
