#pragma once

// Statistical models: the toy height model and the three negative-binomial
// regressions M1 (language intercepts), M2 (+ population slopes) and
// M3 (+ correlated language-level slopes and project intercepts).
//
// Sampler coordinates ("unconstrained space") use:
//   * log for every positive scalar (standard deviations, dispersion, toy sigma);
//   * canonical partial correlations through tanh for the correlation Cholesky factor;
//   * non-centered group effects: language effects = diag(sd) * chol * raw,
//     project intercepts = sigma_gamma * raw, with raw ~ Normal(0, 1).
// All log-Jacobian terms are part of log_prior, and gradients are analytic.

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bayeswork/data.hpp"
#include "bayeswork/math.hpp"
#include "bayeswork/random.hpp"

namespace bayeswork {

enum class Variant { Toy, M1, M2, M3 };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::Toy: return "toy";
    case Variant::M1: return "M1";
    case Variant::M2: return "M2";
    case Variant::M3: return "M3";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "toy" || s == "Toy") return Variant::Toy;
  if (s == "M1" || s == "m1") return Variant::M1;
  if (s == "M2" || s == "m2") return Variant::M2;
  if (s == "M3" || s == "m3") return Variant::M3;
  throw std::invalid_argument("unknown model variant '" + s + "'");
}

struct NormalPrior {
  double mean;
  double sd;
};
struct WeibullPrior {
  double shape;
  double scale;
};
struct GammaPrior {
  double shape;
  double rate;
};
struct CauchyPrior {
  double location;
  double scale;
};

struct PriorConfig {
  NormalPrior intercept{0.0, 5.0};
  NormalPrior slope{0.0, 0.5};
  WeibullPrior group_sd{2.0, 1.0};
  GammaPrior dispersion{0.01, 0.01};
  double lkj_eta = 2.0;
  NormalPrior toy_mu{170.0, 50.0};
  CauchyPrior toy_sigma{0.0, 1.0};

  void validate() const {
    auto positive = [](double v, const char* what) {
      if (!(v > 0) || !std::isfinite(v))
        throw std::invalid_argument(std::string("prior hyperparameter must be positive: ") + what);
    };
    positive(intercept.sd, "intercept sd");
    positive(slope.sd, "slope sd");
    positive(group_sd.shape, "group sd shape");
    positive(group_sd.scale, "group sd scale");
    positive(dispersion.shape, "dispersion shape");
    positive(dispersion.rate, "dispersion rate");
    positive(toy_mu.sd, "toy mu sd");
    positive(toy_sigma.scale, "toy sigma scale");
    if (!(lkj_eta >= 1.0)) throw std::invalid_argument("LKJ eta must be >= 1");
  }
};

struct ModelSpec {
  Variant variant = Variant::M1;
  int n_languages = 0;
  int n_projects = 0;
  PriorConfig priors;
  /// Toy only: treat sigma as known (drops it from the sampled coordinates).
  std::optional<double> toy_fixed_sigma;
  std::vector<std::string> language_names;
  std::vector<std::string> project_names;

  static constexpr int n_predictors = kNumPredictors;

  [[nodiscard]] bool is_toy() const { return variant == Variant::Toy; }
  [[nodiscard]] bool has_slopes() const { return variant == Variant::M2 || variant == Variant::M3; }
  [[nodiscard]] bool has_projects() const { return variant == Variant::M3; }
  /// Number of correlated language-level coefficients (intercept + varying slopes).
  [[nodiscard]] int group_dim() const { return variant == Variant::M3 ? 1 + kNumPredictors : 1; }

  void validate() const {
    priors.validate();
    if (is_toy()) {
      if (toy_fixed_sigma && !(*toy_fixed_sigma > 0))
        throw std::invalid_argument("fixed toy sigma must be positive");
      return;
    }
    if (n_languages < 1) throw std::invalid_argument("model needs at least one language");
    if (has_projects() && n_projects < 1) throw std::invalid_argument("M3 needs at least one project");
  }

  [[nodiscard]] std::string language_label(int l) const {
    return l < static_cast<int>(language_names.size()) ? language_names[static_cast<std::size_t>(l)]
                                                        : std::to_string(l);
  }
  [[nodiscard]] std::string project_label(int p) const {
    return p < static_cast<int>(project_names.size()) ? project_names[static_cast<std::size_t>(p)]
                                                       : std::to_string(p);
  }

  static ModelSpec for_dataset(Variant v, const Dataset& ds) {
    ModelSpec s;
    s.variant = v;
    if (v != Variant::Toy) {
      s.n_languages = ds.n_languages();
      s.n_projects = v == Variant::M3 ? ds.n_projects() : 0;
      s.language_names = ds.language_names;
      if (v == Variant::M3) s.project_names = ds.project_names;
    }
    return s;
  }

  static ModelSpec toy(std::optional<double> fixed_sigma = std::nullopt) {
    ModelSpec s;
    s.variant = Variant::Toy;
    s.toy_fixed_sigma = fixed_sigma;
    return s;
  }
};

/// Offsets of each parameter block inside the unconstrained vector (-1 when absent).
struct Layout {
  int mu = -1;
  int log_sigma = -1;
  int alpha = -1;
  int beta = -1;
  int group_raw = -1;    // n_languages * group_dim, language-major
  int project_raw = -1;  // n_projects
  int log_group_sd = -1; // group_dim
  int log_sigma_gamma = -1;
  int corr = -1;  // group_dim * (group_dim - 1) / 2, row-major over the strict lower triangle
  int log_phi = -1;
  int group_dim = 1;
  int n_corr = 0;
  int dim = 0;
};

inline Layout layout(const ModelSpec& spec) {
  Layout l;
  int at = 0;
  if (spec.is_toy()) {
    l.mu = at++;
    if (!spec.toy_fixed_sigma) l.log_sigma = at++;
    l.dim = at;
    return l;
  }
  l.group_dim = spec.group_dim();
  l.n_corr = l.group_dim * (l.group_dim - 1) / 2;
  l.alpha = at++;
  if (spec.has_slopes()) {
    l.beta = at;
    at += kNumPredictors;
  }
  l.group_raw = at;
  at += spec.n_languages * l.group_dim;
  if (spec.has_projects()) {
    l.project_raw = at;
    at += spec.n_projects;
  }
  l.log_group_sd = at;
  at += l.group_dim;
  if (spec.has_projects()) l.log_sigma_gamma = at++;
  if (l.n_corr > 0) {
    l.corr = at;
    at += l.n_corr;
  }
  l.log_phi = at++;
  l.dim = at;
  return l;
}

inline int dim(const ModelSpec& spec) { return layout(spec).dim; }

/// Natural-space parameter values.
struct Params {
  double alpha = 0.0;
  std::array<double, kNumPredictors> beta{};
  Eigen::VectorXd alpha_language;
  Eigen::MatrixXd beta_language;  // n_languages x 4 (M3)
  Eigen::VectorXd alpha_project;  // M3
  double sigma_alpha = 1.0;
  std::array<double, kNumPredictors> sigma_beta{1.0, 1.0, 1.0, 1.0};
  double sigma_gamma = 1.0;
  Eigen::MatrixXd corr_chol;  // 5 x 5 lower triangular (M3)
  double phi = 1.0;
  double mu = 0.0;
  double sigma = 1.0;

  /// Zero-effect parameters of the right shapes for `spec`.
  static Params zeros(const ModelSpec& spec) {
    Params p;
    if (spec.is_toy()) {
      if (spec.toy_fixed_sigma) p.sigma = *spec.toy_fixed_sigma;
      return p;
    }
    p.alpha_language = Eigen::VectorXd::Zero(spec.n_languages);
    if (spec.variant == Variant::M3) {
      p.beta_language = Eigen::MatrixXd::Zero(spec.n_languages, kNumPredictors);
      p.alpha_project = Eigen::VectorXd::Zero(spec.n_projects);
      p.corr_chol = Eigen::MatrixXd::Identity(spec.group_dim(), spec.group_dim());
    }
    return p;
  }
};

// Correlation Cholesky factor <-> canonical partial correlations ---------------

namespace detail {

/// log(1 - tanh(y)^2), stable for large |y|.
inline double log1m_tanh_sq(double y) {
  const double a = std::abs(y);
  return 2.0 * (std::log(2.0) - a - std::log1p(std::exp(-2.0 * a)));
}

/// Builds the K x K correlation Cholesky factor from free values `y`;
/// `log_jacobian` receives log |d chol / d y| (excluding the unit-norm redundancy).
inline Eigen::MatrixXd corr_cholesky_constrain(std::span<const double> y, int k_dim,
                                               double* log_jacobian = nullptr) {
  // Row i keeps the log of its unused squared norm; products of (1 - z^2) stay
  // accurate where 1 - sum of squares would cancel.
  Eigen::MatrixXd chol = Eigen::MatrixXd::Zero(k_dim, k_dim);
  chol(0, 0) = 1.0;
  double lj = 0.0;
  std::size_t at = 0;
  for (int i = 1; i < k_dim; ++i) {
    double log_rest = 0.0;
    for (int j = 0; j < i; ++j) {
      const double yv = y[at++];
      const double l1m = log1m_tanh_sq(yv);
      lj += l1m + 0.5 * log_rest;
      chol(i, j) = std::tanh(yv) * std::exp(0.5 * log_rest);
      log_rest += l1m;
    }
    chol(i, i) = std::exp(0.5 * log_rest);
  }
  if (log_jacobian) *log_jacobian = lj;
  return chol;
}

/// Adds d(f)/dy to grad_y given grad_chol = d(f)/d(chol), optionally including the log-Jacobian.
inline void corr_cholesky_backprop(std::span<const double> y, const Eigen::MatrixXd& chol,
                                   const Eigen::MatrixXd& grad_chol, std::span<double> grad_y,
                                   bool with_jacobian) {
  const double jac = with_jacobian ? 1.0 : 0.0;
  const int k_dim = static_cast<int>(chol.rows());
  std::size_t row_start = 0;
  std::vector<double> log_rest;
  for (int i = 1; i < k_dim; ++i) {
    log_rest.assign(static_cast<std::size_t>(i), 0.0);
    for (int j = 1; j < i; ++j)
      log_rest[static_cast<std::size_t>(j)] =
          log_rest[static_cast<std::size_t>(j - 1)] +
          log1m_tanh_sq(y[row_start + static_cast<std::size_t>(j - 1)]);
    // g_rest: gradient with respect to the log remainder after column j.
    double g_rest = 0.5 * grad_chol(i, i) * chol(i, i);
    for (int j = i - 1; j >= 0; --j) {
      const std::size_t at = row_start + static_cast<std::size_t>(j);
      const double z = std::tanh(y[at]);
      const double one_minus = std::exp(log1m_tanh_sq(y[at]));
      const double scale = std::exp(0.5 * log_rest[static_cast<std::size_t>(j)]);
      grad_y[at] += grad_chol(i, j) * scale * one_minus - 2.0 * z * (g_rest + jac);
      g_rest += 0.5 * grad_chol(i, j) * chol(i, j) + (j >= 1 ? 0.5 * jac : 0.0);
    }
    row_start += static_cast<std::size_t>(i);
  }
}

inline std::vector<double> corr_cholesky_free(const Eigen::MatrixXd& chol) {
  const int k_dim = static_cast<int>(chol.rows());
  std::vector<double> y;
  y.reserve(static_cast<std::size_t>(k_dim * (k_dim - 1) / 2));
  for (int i = 1; i < k_dim; ++i) {
    double sum_sq = 0.0;
    for (int j = 0; j < i; ++j) {
      const double z = j == 0 ? chol(i, 0) : chol(i, j) / std::sqrt(1.0 - sum_sq);
      y.push_back(std::atanh(z));
      sum_sq += chol(i, j) * chol(i, j);
    }
  }
  return y;
}

}  // namespace detail

// Transforms --------------------------------------------------------------------

inline Params constrain(const ModelSpec& spec, std::span<const double> u) {
  const Layout lay = layout(spec);
  if (static_cast<int>(u.size()) != lay.dim)
    throw std::invalid_argument("unconstrained vector has wrong length");
  Params p = Params::zeros(spec);
  if (spec.is_toy()) {
    p.mu = u[static_cast<std::size_t>(lay.mu)];
    p.sigma = spec.toy_fixed_sigma ? *spec.toy_fixed_sigma
                                   : std::exp(u[static_cast<std::size_t>(lay.log_sigma)]);
    return p;
  }
  auto at = [&](int i) { return u[static_cast<std::size_t>(i)]; };
  const int k_dim = lay.group_dim;
  p.alpha = at(lay.alpha);
  if (spec.has_slopes())
    for (int j = 0; j < kNumPredictors; ++j) p.beta[static_cast<std::size_t>(j)] = at(lay.beta + j);
  Eigen::VectorXd sd(k_dim);
  for (int k = 0; k < k_dim; ++k) sd(k) = std::exp(at(lay.log_group_sd + k));
  p.sigma_alpha = sd(0);
  for (int k = 1; k < k_dim; ++k) p.sigma_beta[static_cast<std::size_t>(k - 1)] = sd(k);
  p.phi = std::exp(at(lay.log_phi));
  if (k_dim == 1) {
    for (int l = 0; l < spec.n_languages; ++l) p.alpha_language(l) = sd(0) * at(lay.group_raw + l);
    return p;
  }
  p.corr_chol = detail::corr_cholesky_constrain(
      u.subspan(static_cast<std::size_t>(lay.corr), static_cast<std::size_t>(lay.n_corr)), k_dim);
  for (int l = 0; l < spec.n_languages; ++l) {
    Eigen::VectorXd raw(k_dim);
    for (int k = 0; k < k_dim; ++k) raw(k) = at(lay.group_raw + l * k_dim + k);
    const Eigen::VectorXd e = sd.cwiseProduct(p.corr_chol * raw);
    p.alpha_language(l) = e(0);
    for (int j = 0; j < kNumPredictors; ++j) p.beta_language(l, j) = e(j + 1);
  }
  p.sigma_gamma = std::exp(at(lay.log_sigma_gamma));
  for (int j = 0; j < spec.n_projects; ++j)
    p.alpha_project(j) = p.sigma_gamma * at(lay.project_raw + j);
  return p;
}

inline std::vector<double> unconstrain(const ModelSpec& spec, const Params& p) {
  const Layout lay = layout(spec);
  std::vector<double> u(static_cast<std::size_t>(lay.dim), 0.0);
  auto set = [&](int i, double v) { u[static_cast<std::size_t>(i)] = v; };
  if (spec.is_toy()) {
    set(lay.mu, p.mu);
    if (!spec.toy_fixed_sigma) set(lay.log_sigma, std::log(p.sigma));
    return u;
  }
  const int k_dim = lay.group_dim;
  set(lay.alpha, p.alpha);
  if (spec.has_slopes())
    for (int j = 0; j < kNumPredictors; ++j) set(lay.beta + j, p.beta[static_cast<std::size_t>(j)]);
  Eigen::VectorXd sd(k_dim);
  sd(0) = p.sigma_alpha;
  for (int k = 1; k < k_dim; ++k) sd(k) = p.sigma_beta[static_cast<std::size_t>(k - 1)];
  for (int k = 0; k < k_dim; ++k) set(lay.log_group_sd + k, std::log(sd(k)));
  set(lay.log_phi, std::log(p.phi));
  if (k_dim == 1) {
    for (int l = 0; l < spec.n_languages; ++l) set(lay.group_raw + l, p.alpha_language(l) / sd(0));
    return u;
  }
  const std::vector<double> free = detail::corr_cholesky_free(p.corr_chol);
  for (int i = 0; i < lay.n_corr; ++i) set(lay.corr + i, free[static_cast<std::size_t>(i)]);
  const auto chol = p.corr_chol.triangularView<Eigen::Lower>();
  for (int l = 0; l < spec.n_languages; ++l) {
    Eigen::VectorXd e(k_dim);
    e(0) = p.alpha_language(l);
    for (int j = 0; j < kNumPredictors; ++j) e(j + 1) = p.beta_language(l, j);
    const Eigen::VectorXd raw = chol.solve(e.cwiseQuotient(sd));
    for (int k = 0; k < k_dim; ++k) set(lay.group_raw + l * k_dim + k, raw(k));
  }
  set(lay.log_sigma_gamma, std::log(p.sigma_gamma));
  for (int j = 0; j < spec.n_projects; ++j) set(lay.project_raw + j, p.alpha_project(j) / p.sigma_gamma);
  return u;
}

// Observation model ---------------------------------------------------------------

inline void check_row(const ModelSpec& spec, const PreparedRow& row) {
  if (spec.is_toy()) return;
  if (row.language_index < 0 || row.language_index >= spec.n_languages)
    throw std::out_of_range("row language index outside the model's range");
  if (spec.has_projects() && (row.project_index < 0 || row.project_index >= spec.n_projects))
    throw std::out_of_range("row project index outside the model's range");
}

/// log(lambda) for one row: population term + language term (+ project term for M3).
inline double linear_predictor(const ModelSpec& spec, const Params& p, const PreparedRow& row) {
  check_row(spec, row);
  const int l = row.language_index;
  double eta = p.alpha + p.alpha_language(l);
  if (spec.has_slopes())
    for (int j = 0; j < kNumPredictors; ++j)
      eta += p.beta[static_cast<std::size_t>(j)] * row.x[static_cast<std::size_t>(j)];
  if (spec.variant == Variant::M3) {
    for (int j = 0; j < kNumPredictors; ++j)
      eta += p.beta_language(l, j) * row.x[static_cast<std::size_t>(j)];
    eta += p.alpha_project(row.project_index);
  }
  return eta;
}

inline std::vector<double> log_likelihood_pointwise(const ModelSpec& spec, const Params& p,
                                                    const Dataset& data) {
  std::vector<double> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const PreparedRow& row = data.rows[i];
    if (spec.is_toy()) {
      out[i] = normal_lpdf(row.height, p.mu, p.sigma);
    } else {
      out[i] = nb_logpmf_log_rate(static_cast<double>(row.bugs), linear_predictor(spec, p, row),
                                  p.phi);
    }
  }
  return out;
}

// Joint density with gradient --------------------------------------------------------

/// Evaluates log prior, log likelihood and their gradient in unconstrained space.
/// Holds per-dataset constants; safe to share across threads (all methods const).
class Posterior {
 public:
  Posterior(ModelSpec spec, const Dataset& data) : spec_(std::move(spec)), data_(&data) {
    spec_.validate();
    lay_ = layout(spec_);
    for (const auto& row : data.rows) check_row(spec_, row);
    if (!spec_.is_toy()) {
      log_factorial_.reserve(data.size());
      for (const auto& row : data.rows)
        log_factorial_.push_back(std::lgamma(static_cast<double>(row.bugs) + 1.0));
    }
  }

  [[nodiscard]] const ModelSpec& spec() const { return spec_; }
  [[nodiscard]] int dim() const { return lay_.dim; }

  /// Log posterior; when `grad` is non-null it is resized and filled.
  double operator()(std::span<const double> u, std::vector<double>* grad) const {
    return evaluate(u, grad, true, true, nullptr);
  }

  double log_prior(std::span<const double> u, std::vector<double>* grad = nullptr) const {
    return evaluate(u, grad, true, false, nullptr);
  }

  /// Pointwise log likelihood at u (natural-parameter route is log_likelihood_pointwise).
  std::vector<double> pointwise(std::span<const double> u) const {
    std::vector<double> out;
    evaluate(u, nullptr, false, true, &out);
    return out;
  }

  double evaluate(std::span<const double> u, std::vector<double>* grad, bool with_prior,
                  bool with_likelihood, std::vector<double>* pointwise) const {
    if (static_cast<int>(u.size()) != lay_.dim)
      throw std::invalid_argument("unconstrained vector has wrong length");
    for (double v : u)
      if (!std::isfinite(v)) throw std::domain_error("non-finite unconstrained coordinate");
    if (grad) grad->assign(u.size(), 0.0);
    return spec_.is_toy() ? toy(u, grad, with_prior, with_likelihood, pointwise)
                          : regression(u, grad, with_prior, with_likelihood, pointwise);
  }

 private:
  double toy(std::span<const double> u, std::vector<double>* grad, bool with_prior,
             bool with_likelihood, std::vector<double>* pointwise) const {
    const auto& pr = spec_.priors;
    const double mu = u[static_cast<std::size_t>(lay_.mu)];
    const bool free_sigma = !spec_.toy_fixed_sigma;
    const double log_sigma = free_sigma ? u[static_cast<std::size_t>(lay_.log_sigma)]
                                        : std::log(*spec_.toy_fixed_sigma);
    const double sigma = std::exp(log_sigma);
    double lp = 0.0, g_mu = 0.0, g_ls = 0.0;
    if (with_prior) {
      lp += normal_lpdf(mu, pr.toy_mu.mean, pr.toy_mu.sd);
      g_mu -= (mu - pr.toy_mu.mean) / (pr.toy_mu.sd * pr.toy_mu.sd);
      if (free_sigma) {
        const double z = (sigma - pr.toy_sigma.location) / pr.toy_sigma.scale;
        lp += half_cauchy_lpdf(sigma, pr.toy_sigma.location, pr.toy_sigma.scale) + log_sigma;
        g_ls += 1.0 - 2.0 * z * sigma / (pr.toy_sigma.scale * (1.0 + z * z));
      }
    }
    if (with_likelihood) {
      if (pointwise) pointwise->resize(data_->size());
      for (std::size_t i = 0; i < data_->size(); ++i) {
        const double r = (data_->rows[i].height - mu) / sigma;
        const double ll = -0.5 * r * r - log_sigma - kLogSqrtTwoPi;
        lp += ll;
        if (pointwise) (*pointwise)[i] = ll;
        g_mu += r / sigma;
        g_ls += r * r - 1.0;
      }
    }
    if (grad) {
      (*grad)[static_cast<std::size_t>(lay_.mu)] = g_mu;
      if (free_sigma) (*grad)[static_cast<std::size_t>(lay_.log_sigma)] = g_ls;
    }
    return lp;
  }

  double regression(std::span<const double> u, std::vector<double>* grad, bool with_prior,
                    bool with_likelihood, std::vector<double>* pointwise) const {
    const auto& pr = spec_.priors;
    const int k_dim = lay_.group_dim;
    const int n_lang = spec_.n_languages;
    const bool slopes = spec_.has_slopes();
    const bool projects = spec_.has_projects();
    auto at = [&](int i) { return u[static_cast<std::size_t>(i)]; };
    auto g = [&](int i) -> double& { return (*grad)[static_cast<std::size_t>(i)]; };

    const double alpha = at(lay_.alpha);
    std::array<double, kNumPredictors> beta{};
    if (slopes)
      for (int j = 0; j < kNumPredictors; ++j) beta[static_cast<std::size_t>(j)] = at(lay_.beta + j);
    Eigen::VectorXd sd(k_dim);
    for (int k = 0; k < k_dim; ++k) sd(k) = std::exp(at(lay_.log_group_sd + k));
    const double log_phi = at(lay_.log_phi);
    const double phi = std::exp(log_phi);
    const double sigma_gamma = projects ? std::exp(at(lay_.log_sigma_gamma)) : 0.0;

    double corr_log_jacobian = 0.0;
    Eigen::MatrixXd chol = Eigen::MatrixXd::Ones(1, 1);
    std::span<const double> corr_free;
    if (k_dim > 1) {
      corr_free = u.subspan(static_cast<std::size_t>(lay_.corr), static_cast<std::size_t>(lay_.n_corr));
      chol = detail::corr_cholesky_constrain(corr_free, k_dim, &corr_log_jacobian);
    }
    // raw (k_dim x n_lang), scaled-free t = chol * raw, effects e = sd .* t
    Eigen::MatrixXd raw(k_dim, n_lang);
    for (int l = 0; l < n_lang; ++l)
      for (int k = 0; k < k_dim; ++k) raw(k, l) = at(lay_.group_raw + l * k_dim + k);
    const Eigen::MatrixXd t = chol.triangularView<Eigen::Lower>() * raw;
    const Eigen::MatrixXd effects = sd.asDiagonal() * t;

    double lp = 0.0;
    Eigen::MatrixXd g_effects;
    double g_phi = 0.0;       // d/d phi (natural)
    double g_sigma_gamma = 0.0;
    if (grad) g_effects = Eigen::MatrixXd::Zero(k_dim, n_lang);

    if (with_likelihood) {
      if (pointwise) pointwise->resize(data_->size());
      const double lgamma_phi = std::lgamma(phi);
      const double digamma_phi = grad ? digamma(phi) : 0.0;
      for (std::size_t i = 0; i < data_->size(); ++i) {
        const PreparedRow& row = data_->rows[i];
        const int l = row.language_index;
        double eta = alpha + effects(0, l);
        if (slopes)
          for (int j = 0; j < kNumPredictors; ++j)
            eta += beta[static_cast<std::size_t>(j)] * row.x[static_cast<std::size_t>(j)];
        if (k_dim > 1)
          for (int j = 0; j < kNumPredictors; ++j)
            eta += effects(j + 1, l) * row.x[static_cast<std::size_t>(j)];
        double w_raw = 0.0;
        if (projects) {
          w_raw = at(lay_.project_raw + row.project_index);
          eta += sigma_gamma * w_raw;
        }
        const double y = static_cast<double>(row.bugs);
        const double log_denom = log_sum_exp(log_phi, eta);
        double ll = phi * (log_phi - log_denom);
        if (y > 0) ll += std::lgamma(y + phi) - lgamma_phi - log_factorial_[i] + y * (eta - log_denom);
        lp += ll;
        if (pointwise) (*pointwise)[i] = ll;
        if (grad) {
          // same values as nb_logpmf_gradient, with the phi-only terms hoisted
          const double w_rate = std::exp(eta - log_denom);
          const double w_phi = std::exp(log_phi - log_denom);
          const double d_log_rate = y * w_phi - phi * w_rate;
          double d_phi = (log_phi - log_denom) + w_rate - y * std::exp(-log_denom);
          if (y > 0) d_phi += digamma(y + phi) - digamma_phi;
          g(lay_.alpha) += d_log_rate;
          g_effects(0, l) += d_log_rate;
          if (slopes)
            for (int j = 0; j < kNumPredictors; ++j)
              g(lay_.beta + j) += d_log_rate * row.x[static_cast<std::size_t>(j)];
          if (k_dim > 1)
            for (int j = 0; j < kNumPredictors; ++j)
              g_effects(j + 1, l) += d_log_rate * row.x[static_cast<std::size_t>(j)];
          if (projects) {
            g(lay_.project_raw + row.project_index) += d_log_rate * sigma_gamma;
            g_sigma_gamma += d_log_rate * w_raw;
          }
          g_phi += d_phi;
        }
      }
    }

    if (with_prior) {
      lp += normal_lpdf(alpha, pr.intercept.mean, pr.intercept.sd);
      if (slopes)
        for (int j = 0; j < kNumPredictors; ++j)
          lp += normal_lpdf(beta[static_cast<std::size_t>(j)], pr.slope.mean, pr.slope.sd);
      for (int l = 0; l < n_lang; ++l)
        for (int k = 0; k < k_dim; ++k) lp += normal_lpdf(raw(k, l), 0.0, 1.0);
      if (projects)
        for (int j = 0; j < spec_.n_projects; ++j) lp += normal_lpdf(at(lay_.project_raw + j), 0.0, 1.0);
      // positive scalars: density on the natural scale plus log-Jacobian of exp
      auto positive_weibull = [&](double value, double log_value) {
        return weibull_lpdf(value, pr.group_sd.shape, pr.group_sd.scale) + log_value;
      };
      for (int k = 0; k < k_dim; ++k) lp += positive_weibull(sd(k), at(lay_.log_group_sd + k));
      if (projects) lp += positive_weibull(sigma_gamma, at(lay_.log_sigma_gamma));
      lp += gamma_lpdf(phi, pr.dispersion.shape, pr.dispersion.rate) + log_phi;
      if (k_dim > 1) {
        lp += lkj_cholesky_lpdf(chol, pr.lkj_eta) + corr_log_jacobian;
      }
    }

    if (!grad) return lp;

    // Prior gradients (unconstrained).
    auto weibull_dlog = [&](double value) {
      // d/du [log Weibull(e^u) + u]
      const double a = pr.group_sd.shape;
      return a - a * std::pow(value / pr.group_sd.scale, a);
    };
    if (with_prior) {
      g(lay_.alpha) -= (alpha - pr.intercept.mean) / (pr.intercept.sd * pr.intercept.sd);
      if (slopes)
        for (int j = 0; j < kNumPredictors; ++j)
          g(lay_.beta + j) -= (beta[static_cast<std::size_t>(j)] - pr.slope.mean) / (pr.slope.sd * pr.slope.sd);
      for (int l = 0; l < n_lang; ++l)
        for (int k = 0; k < k_dim; ++k) g(lay_.group_raw + l * k_dim + k) -= raw(k, l);
      if (projects)
        for (int j = 0; j < spec_.n_projects; ++j) g(lay_.project_raw + j) -= at(lay_.project_raw + j);
      for (int k = 0; k < k_dim; ++k) g(lay_.log_group_sd + k) += weibull_dlog(sd(k));
      if (projects) g(lay_.log_sigma_gamma) += weibull_dlog(sigma_gamma);
      g(lay_.log_phi) += pr.dispersion.shape - pr.dispersion.rate * phi;
    }
    // Likelihood chain rule through the positive transforms.
    g(lay_.log_phi) += g_phi * phi;
    if (projects) g(lay_.log_sigma_gamma) += g_sigma_gamma * sigma_gamma;

    // effects = diag(sd) * chol * raw
    const Eigen::MatrixXd v = sd.asDiagonal() * g_effects;  // d/dt
    for (int k = 0; k < k_dim; ++k) g(lay_.log_group_sd + k) += g_effects.row(k).dot(t.row(k)) * sd(k);
    const Eigen::MatrixXd g_raw = chol.triangularView<Eigen::Lower>().transpose() * v;
    for (int l = 0; l < n_lang; ++l)
      for (int k = 0; k < k_dim; ++k) g(lay_.group_raw + l * k_dim + k) += g_raw(k, l);
    if (k_dim > 1) {
      Eigen::MatrixXd g_chol = (v * raw.transpose()).triangularView<Eigen::Lower>();
      if (with_prior) {
        for (int i = 1; i < k_dim; ++i)
          g_chol(i, i) += (k_dim - i - 1 + 2.0 * (pr.lkj_eta - 1.0)) / chol(i, i);
      }
      std::vector<double> g_free(static_cast<std::size_t>(lay_.n_corr), 0.0);
      detail::corr_cholesky_backprop(corr_free, chol, g_chol, g_free, with_prior);
      for (int i = 0; i < lay_.n_corr; ++i) g(lay_.corr + i) += g_free[static_cast<std::size_t>(i)];
    }
    return lp;
  }

 public:
  /// LKJ density of a correlation matrix expressed through its Cholesky factor.
  static double lkj_cholesky_lpdf(const Eigen::MatrixXd& chol, double eta) {
    const int k_dim = static_cast<int>(chol.rows());
    double lp = -lkj_log_normalizer(k_dim, eta);
    for (int i = 1; i < k_dim; ++i) lp += (k_dim - i - 1 + 2.0 * (eta - 1.0)) * std::log(chol(i, i));
    return lp;
  }

 private:
  ModelSpec spec_;
  const Dataset* data_;
  Layout lay_;
  std::vector<double> log_factorial_;
};

inline double log_prior(const ModelSpec& spec, std::span<const double> u) {
  static const Dataset empty;
  return Posterior(spec, empty).log_prior(u);
}

struct ValueAndGradient {
  double value;
  std::vector<double> gradient;
};

inline ValueAndGradient log_posterior_and_grad(const ModelSpec& spec, std::span<const double> u,
                                               const Dataset& data) {
  ValueAndGradient out;
  out.value = Posterior(spec, data)(u, &out.gradient);
  return out;
}

// Prior draws and forward simulation --------------------------------------------------

/// LKJ(eta) draw of a K x K correlation Cholesky factor (C-vine partial correlations).
inline Eigen::MatrixXd lkj_cholesky_draw(Rng& rng, int k_dim, double eta) {
  // Partial correlation at (row i, column j) ~ 2 * Beta(b_j, b_j) - 1, b_j = eta + (K - 2 - j) / 2.
  std::vector<double> free;
  for (int i = 1; i < k_dim; ++i) {
    for (int j = 0; j < i; ++j) {
      const double b = eta + 0.5 * (k_dim - 2 - j);
      const double cpc = 2.0 * beta_draw(rng, b, b) - 1.0;
      free.push_back(std::atanh(std::clamp(cpc, -1.0 + 1e-15, 1.0 - 1e-15)));
    }
  }
  return detail::corr_cholesky_constrain(free, k_dim);
}

inline Params sample_prior(Rng& rng, const ModelSpec& spec) {
  const auto& pr = spec.priors;
  Params p = Params::zeros(spec);
  if (spec.is_toy()) {
    p.mu = rng.normal(pr.toy_mu.mean, pr.toy_mu.sd);
    p.sigma = spec.toy_fixed_sigma ? *spec.toy_fixed_sigma
                                   : std::max(half_cauchy_draw(rng, pr.toy_sigma.location,
                                                               pr.toy_sigma.scale),
                                              DBL_MIN);
    return p;
  }
  auto sd_draw = [&] { return std::max(weibull_draw(rng, pr.group_sd.shape, pr.group_sd.scale), DBL_MIN); };
  p.alpha = rng.normal(pr.intercept.mean, pr.intercept.sd);
  if (spec.has_slopes())
    for (auto& b : p.beta) b = rng.normal(pr.slope.mean, pr.slope.sd);
  p.sigma_alpha = sd_draw();
  if (spec.variant == Variant::M3) {
    for (auto& s : p.sigma_beta) s = sd_draw();
    p.sigma_gamma = sd_draw();
    p.corr_chol = lkj_cholesky_draw(rng, spec.group_dim(), pr.lkj_eta);
    Eigen::VectorXd sd(spec.group_dim());
    sd(0) = p.sigma_alpha;
    for (int j = 0; j < kNumPredictors; ++j) sd(j + 1) = p.sigma_beta[static_cast<std::size_t>(j)];
    for (int l = 0; l < spec.n_languages; ++l) {
      Eigen::VectorXd raw(spec.group_dim());
      for (int k = 0; k < spec.group_dim(); ++k) raw(k) = rng.normal();
      const Eigen::VectorXd e = sd.cwiseProduct(p.corr_chol * raw);
      p.alpha_language(l) = e(0);
      for (int j = 0; j < kNumPredictors; ++j) p.beta_language(l, j) = e(j + 1);
    }
    for (int j = 0; j < spec.n_projects; ++j) p.alpha_project(j) = p.sigma_gamma * rng.normal();
  } else {
    for (int l = 0; l < spec.n_languages; ++l) p.alpha_language(l) = p.sigma_alpha * rng.normal();
  }
  p.phi = gamma_draw(rng, pr.dispersion.shape, pr.dispersion.rate);
  return p;
}

/// One outcome per design row: NB counts (integer-valued doubles) or toy heights.
inline std::vector<double> simulate_outcomes(Rng& rng, const ModelSpec& spec, const Params& p,
                                             std::span<const PreparedRow> design) {
  std::vector<double> out(design.size());
  for (std::size_t i = 0; i < design.size(); ++i) {
    if (spec.is_toy()) {
      out[i] = rng.normal(p.mu, p.sigma);
    } else {
      out[i] = nb_draw_log_rate(rng, linear_predictor(spec, p, design[i]), p.phi);
    }
  }
  return out;
}

// Flat views used by SBC, intervals and reports -----------------------------------------

inline std::vector<std::string> parameter_names(const ModelSpec& spec) {
  std::vector<std::string> names;
  if (spec.is_toy()) {
    names.push_back("mu");
    if (!spec.toy_fixed_sigma) names.push_back("sigma");
    return names;
  }
  names.push_back("alpha");
  if (spec.has_slopes())
    for (const char* pn : kPredictorNames) names.push_back(std::string("beta[") + pn + "]");
  for (int l = 0; l < spec.n_languages; ++l)
    names.push_back("alpha_language[" + spec.language_label(l) + "]");
  if (spec.variant == Variant::M3) {
    for (int l = 0; l < spec.n_languages; ++l)
      for (const char* pn : kPredictorNames)
        names.push_back("beta_language[" + spec.language_label(l) + "," + pn + "]");
    for (int j = 0; j < spec.n_projects; ++j)
      names.push_back("alpha_project[" + spec.project_label(j) + "]");
  }
  names.push_back("sigma_alpha");
  if (spec.variant == Variant::M3) {
    for (const char* pn : kPredictorNames) names.push_back(std::string("sigma_beta[") + pn + "]");
    names.push_back("sigma_gamma");
    const int k_dim = spec.group_dim();
    for (int i = 1; i < k_dim; ++i)
      for (int j = 0; j < i; ++j)
        names.push_back("corr[" + std::to_string(i) + "," + std::to_string(j) + "]");
  }
  names.push_back("phi");
  return names;
}

/// Natural-space scalars in parameter_names order.
inline std::vector<double> flatten(const ModelSpec& spec, const Params& p) {
  std::vector<double> v;
  if (spec.is_toy()) {
    v.push_back(p.mu);
    if (!spec.toy_fixed_sigma) v.push_back(p.sigma);
    return v;
  }
  v.push_back(p.alpha);
  if (spec.has_slopes()) v.insert(v.end(), p.beta.begin(), p.beta.end());
  for (int l = 0; l < spec.n_languages; ++l) v.push_back(p.alpha_language(l));
  if (spec.variant == Variant::M3) {
    for (int l = 0; l < spec.n_languages; ++l)
      for (int j = 0; j < kNumPredictors; ++j) v.push_back(p.beta_language(l, j));
    for (int j = 0; j < spec.n_projects; ++j) v.push_back(p.alpha_project(j));
  }
  v.push_back(p.sigma_alpha);
  if (spec.variant == Variant::M3) {
    v.insert(v.end(), p.sigma_beta.begin(), p.sigma_beta.end());
    v.push_back(p.sigma_gamma);
    const Eigen::MatrixXd corr = p.corr_chol * p.corr_chol.transpose();
    for (int i = 1; i < spec.group_dim(); ++i)
      for (int j = 0; j < i; ++j) v.push_back(corr(i, j));
  }
  v.push_back(p.phi);
  return v;
}

}  // namespace bayeswork
