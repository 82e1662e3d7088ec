#pragma once

// Random streams and the handful of samplers the models need.
//
// Every stream is keyed by (seed, stream index[, sub-index]) so that results
// never depend on which thread happens to run a chain or SBC iteration.

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <cstdint>
#include <random>

namespace bayeswork {

class Rng {
 public:
  using result_type = std::mt19937_64::result_type;

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t substream = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      static_cast<std::uint32_t>(substream),
                      static_cast<std::uint32_t>(substream >> 32), 0x62617977u};
    engine_.seed(seq);
  }

  /// Independent child stream; the parent is not advanced.
  [[nodiscard]] static Rng derive(std::uint64_t seed, std::uint64_t stream,
                                  std::uint64_t substream = 0) {
    return Rng(seed, stream, substream);
  }

  result_type operator()() { return engine_(); }
  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  double normal(double mu, double sigma) { return mu + sigma * normal(); }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

 private:
  std::mt19937_64 engine_;
};

/// log of a Gamma(shape, 1) draw; stays finite where the draw itself would underflow.
inline double log_gamma_draw(Rng& rng, double shape) {
  if (shape >= 1.0) {
    return std::log(std::gamma_distribution<double>(shape, 1.0)(rng));
  }
  // Gamma(a) = Gamma(a + 1) * U^(1/a)
  const double g = std::gamma_distribution<double>(shape + 1.0, 1.0)(rng);
  double u = rng.uniform();
  while (u <= 0.0) u = rng.uniform();
  return std::log(g) + std::log(u) / shape;
}

/// Gamma(shape, rate) draw floored at the smallest normal double.
inline double gamma_draw(Rng& rng, double shape, double rate) {
  const double v = std::exp(log_gamma_draw(rng, shape) - std::log(rate));
  return std::max(v, DBL_MIN);
}

inline double beta_draw(Rng& rng, double a, double b) {
  const double la = log_gamma_draw(rng, a);
  const double lb = log_gamma_draw(rng, b);
  const double m = std::max(la, lb);
  const double x = std::exp(la - m);
  const double y = std::exp(lb - m);
  return x / (x + y);
}

inline double weibull_draw(Rng& rng, double shape, double scale) {
  return std::weibull_distribution<double>(shape, scale)(rng);
}

inline double half_cauchy_draw(Rng& rng, double location, double scale) {
  return location + std::abs(std::cauchy_distribution<double>(0.0, scale)(rng));
}

/// Poisson draw returned as a double; very large means use the normal approximation.
inline double poisson_draw(Rng& rng, double mean) {
  if (!(mean > 0.0)) return 0.0;
  if (mean < 1e9) {
    return static_cast<double>(std::poisson_distribution<std::int64_t>(mean)(rng));
  }
  if (!std::isfinite(mean)) return DBL_MAX;
  const double v = std::round(mean + std::sqrt(mean) * rng.normal());
  return std::max(v, 0.0);
}

/// Negative binomial draw (mean exp(log_rate), dispersion phi) as a Gamma-Poisson mixture.
inline double nb_draw_log_rate(Rng& rng, double log_rate, double phi) {
  const double log_mix = log_rate - std::log(phi) + log_gamma_draw(rng, phi);
  if (log_mix > 709.0) return DBL_MAX;
  return poisson_draw(rng, std::exp(log_mix));
}

}  // namespace bayeswork
