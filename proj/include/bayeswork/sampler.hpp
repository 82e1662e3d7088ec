#pragma once

// No-U-Turn sampler with multinomial trajectory sampling, dual-averaging step
// size adaptation and a windowed diagonal metric. The transition follows the
// Betancourt formulation used by Stan so that results are comparable.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "bayeswork/math.hpp"
#include "bayeswork/model.hpp"
#include "bayeswork/random.hpp"

namespace bayeswork {

struct SamplerConfig {
  int n_chains = 4;
  int n_warmup = 1000;
  int n_draws = 1000;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  std::uint64_t seed = 20190101;
  double init_radius = 2.0;
  /// Worker threads; 0 means one per hardware thread. Never affects results.
  int threads = 0;
  /// When set, the step size is held at this value and no adaptation happens.
  std::optional<double> fixed_step_size;

  void validate() const {
    if (n_chains < 1 || n_draws < 1 || n_warmup < 0 || max_tree_depth < 1)
      throw std::invalid_argument("sampler counts must be positive");
    if (!(target_accept > 0.0 && target_accept < 1.0))
      throw std::invalid_argument("target_accept must lie in (0, 1)");
    if (!(init_radius >= 0.0)) throw std::invalid_argument("init_radius must be nonnegative");
    if (fixed_step_size && !(*fixed_step_size > 0.0))
      throw std::invalid_argument("fixed step size must be positive");
  }
};

struct IterationStats {
  double lp = 0.0;
  double accept_stat = 0.0;
  double step_size = 0.0;
  int tree_depth = 0;
  int n_leapfrog = 0;
  bool divergent = false;
  double energy = 0.0;
  double max_energy_error = 0.0;  // largest |H - H0| seen along the trajectory
};

/// Post-warmup sample array, chain-major: value(c, i, d).
struct Draws {
  int n_chains = 0;
  int n_draws = 0;
  int dim = 0;
  std::vector<double> values;
  std::vector<IterationStats> stats;  // (c, i)
  std::vector<double> step_size;      // adapted step size per chain
  std::vector<std::vector<double>> inv_metric;
  std::optional<ModelSpec> spec;
  std::vector<double> wall_seconds;  // per chain; metadata only

  [[nodiscard]] double value(int c, int i, int d) const {
    return values[(static_cast<std::size_t>(c) * n_draws + i) * dim + d];
  }
  [[nodiscard]] std::span<const double> point(int c, int i) const {
    return {values.data() + (static_cast<std::size_t>(c) * n_draws + i) * dim,
            static_cast<std::size_t>(dim)};
  }
  [[nodiscard]] const IterationStats& stat(int c, int i) const {
    return stats[static_cast<std::size_t>(c) * n_draws + i];
  }
  [[nodiscard]] std::size_t total() const {
    return static_cast<std::size_t>(n_chains) * static_cast<std::size_t>(n_draws);
  }
  /// Draws of coordinate d, one vector per chain.
  [[nodiscard]] std::vector<std::vector<double>> chains_of(int d) const {
    std::vector<std::vector<double>> out(static_cast<std::size_t>(n_chains));
    for (int c = 0; c < n_chains; ++c) {
      out[c].reserve(static_cast<std::size_t>(n_draws));
      for (int i = 0; i < n_draws; ++i) out[c].push_back(value(c, i, d));
    }
    return out;
  }
  [[nodiscard]] int divergences() const {
    int n = 0;
    for (const auto& s : stats) n += s.divergent ? 1 : 0;
    return n;
  }
};

class SamplerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

/// Dual averaging of the log step size toward a target acceptance statistic.
class StepSizeAdapter {
 public:
  explicit StepSizeAdapter(double delta) : delta_(delta) {}

  void restart(double step) {
    mu_ = std::log(10.0 * step);
    counter_ = 0;
    s_bar_ = 0.0;
    x_bar_ = 0.0;
  }

  double learn(double accept_stat) {
    ++counter_;
    accept_stat = std::min(1.0, accept_stat);
    const double eta = 1.0 / (counter_ + kT0);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - accept_stat);
    const double x = mu_ - s_bar_ * std::sqrt(static_cast<double>(counter_)) / kGamma;
    const double x_eta = std::pow(static_cast<double>(counter_), -kKappa);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    return std::exp(x);
  }

  [[nodiscard]] double final_step() const { return std::exp(x_bar_); }

 private:
  static constexpr double kGamma = 0.05;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;
  double delta_;
  double mu_ = 0.0;
  long counter_ = 0;
  double s_bar_ = 0.0;
  double x_bar_ = 0.0;
};

/// Expanding-window schedule for the diagonal metric (75 / 25 doubling / 50).
class MetricWindows {
 public:
  explicit MetricWindows(int n_warmup) : n_warmup_(n_warmup) {
    if (n_warmup < 20) {
      active_ = false;
      return;
    }
    if (init_buffer_ + base_window_ + term_buffer_ > n_warmup) {
      init_buffer_ = static_cast<int>(0.15 * n_warmup);
      term_buffer_ = static_cast<int>(0.1 * n_warmup);
      base_window_ = n_warmup - (init_buffer_ + term_buffer_);
    }
    window_size_ = base_window_;
    next_window_ = init_buffer_ + window_size_ - 1;
  }

  /// Feeds one warmup position; returns a new inverse metric when a window closes.
  std::optional<std::vector<double>> learn(std::span<const double> q) {
    if (!active_) return std::nullopt;
    if (in_window()) add(q);
    if (counter_ == next_window_ && counter_ != n_warmup_) {
      advance();
      std::vector<double> var(q.size());
      const double n = static_cast<double>(n_samples_);
      for (std::size_t d = 0; d < q.size(); ++d) {
        const double v = n_samples_ > 1 ? m2_[d] / (n - 1.0) : 1.0;
        var[d] = (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0));
      }
      n_samples_ = 0;
      ++counter_;
      return var;
    }
    ++counter_;
    return std::nullopt;
  }

 private:
  [[nodiscard]] bool in_window() const {
    return counter_ >= init_buffer_ && counter_ < n_warmup_ - term_buffer_ &&
           counter_ != n_warmup_;
  }

  void add(std::span<const double> q) {
    if (n_samples_ == 0) {
      mean_.assign(q.size(), 0.0);
      m2_.assign(q.size(), 0.0);
    }
    ++n_samples_;
    for (std::size_t d = 0; d < q.size(); ++d) {
      const double delta = q[d] - mean_[d];
      mean_[d] += delta / n_samples_;
      m2_[d] += delta * (q[d] - mean_[d]);
    }
  }

  void advance() {
    if (next_window_ == n_warmup_ - term_buffer_ - 1) return;
    window_size_ *= 2;
    next_window_ = counter_ + window_size_;
    if (next_window_ != n_warmup_ - term_buffer_ - 1) {
      const int boundary = next_window_ + 2 * window_size_;
      if (boundary >= n_warmup_ - term_buffer_) next_window_ = n_warmup_ - term_buffer_ - 1;
    }
  }

  int n_warmup_;
  bool active_ = true;
  int init_buffer_ = 75;
  int term_buffer_ = 50;
  int base_window_ = 25;
  int window_size_ = 0;
  int next_window_ = 0;
  int counter_ = 0;
  long n_samples_ = 0;
  std::vector<double> mean_, m2_;
};

template <class Target>
class NutsChain {
 public:
  NutsChain(const Target& target, int dim, const SamplerConfig& config, Rng rng)
      : target_(target), dim_(dim), config_(config), rng_(std::move(rng)),
        inv_metric_(static_cast<std::size_t>(dim), 1.0) {}

  struct State {
    std::vector<double> q, p, grad;
    double lp = 0.0;
  };

  void initialize() {
    state_.q.assign(static_cast<std::size_t>(dim_), 0.0);
    state_.p.assign(static_cast<std::size_t>(dim_), 0.0);
    for (int attempt = 0; attempt < 100; ++attempt) {
      for (double& x : state_.q) x = rng_.uniform(-config_.init_radius, config_.init_radius);
      evaluate(state_);
      if (std::isfinite(state_.lp) &&
          std::all_of(state_.grad.begin(), state_.grad.end(), [](double g) { return std::isfinite(g); }))
        return;
    }
    throw SamplerError("could not find a finite starting point after 100 attempts");
  }

  void set_step_size(double eps) { step_ = eps; }
  [[nodiscard]] double step_size() const { return step_; }
  [[nodiscard]] const std::vector<double>& inv_metric() const { return inv_metric_; }
  [[nodiscard]] const State& state() const { return state_; }

  /// Stan's heuristic: double or halve until one leapfrog step crosses acceptance 0.8.
  void init_step_size() {
    const State start = state_;
    sample_momentum(state_);
    double h0 = hamiltonian(state_);
    leapfrog(state_, step_);
    double delta = h0 - hamiltonian(state_);
    if (std::isnan(delta)) delta = -kInf;
    const int direction = delta > std::log(0.8) ? 1 : -1;
    while (true) {
      state_ = start;
      sample_momentum(state_);
      h0 = hamiltonian(state_);
      leapfrog(state_, step_);
      delta = h0 - hamiltonian(state_);
      if (std::isnan(delta)) delta = -kInf;
      if (direction == 1 && !(delta > std::log(0.8))) break;
      if (direction == -1 && !(delta < std::log(0.8))) break;
      step_ = direction == 1 ? 2.0 * step_ : 0.5 * step_;
      if (step_ > 1e7) throw SamplerError("posterior appears improper: step size diverged");
      if (step_ == 0.0) throw SamplerError("no acceptably small step size: step size underflowed");
    }
    state_ = start;
  }

  void set_inv_metric(std::vector<double> v) { inv_metric_ = std::move(v); }

  IterationStats transition() {
    sample_momentum(state_);
    const double h0 = hamiltonian(state_);

    State z_fwd = state_, z_bck = state_, z_sample = state_, z_propose = state_;
    std::vector<double> p_fwd_fwd = state_.p, p_sharp_fwd_fwd = sharp(state_.p);
    std::vector<double> p_fwd_bck = state_.p, p_sharp_fwd_bck = p_sharp_fwd_fwd;
    std::vector<double> p_bck_fwd = state_.p, p_sharp_bck_fwd = p_sharp_fwd_fwd;
    std::vector<double> p_bck_bck = state_.p, p_sharp_bck_bck = p_sharp_fwd_fwd;
    std::vector<double> rho = state_.p;
    double log_sum_weight = 0.0;

    n_leapfrog_ = 0;
    sum_metro_prob_ = 0.0;
    divergent_ = false;
    max_error_ = 0.0;
    int depth = 0;
    const std::size_t n = static_cast<std::size_t>(dim_);

    while (depth < config_.max_tree_depth) {
      std::vector<double> rho_fwd(n, 0.0), rho_bck(n, 0.0);
      bool valid = false;
      double lsw_subtree = -kInf;
      if (rng_.uniform() > 0.5) {
        state_ = z_fwd;
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        p_sharp_bck_fwd = p_sharp_fwd_bck;
        valid = build_tree(depth, z_propose, p_sharp_fwd_bck, p_sharp_fwd_fwd, rho_fwd, p_fwd_bck,
                           p_fwd_fwd, h0, 1.0, lsw_subtree);
        z_fwd = state_;
      } else {
        state_ = z_bck;
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        p_sharp_fwd_bck = p_sharp_bck_fwd;
        valid = build_tree(depth, z_propose, p_sharp_bck_fwd, p_sharp_bck_bck, rho_bck, p_bck_fwd,
                           p_bck_bck, h0, -1.0, lsw_subtree);
        z_bck = state_;
      }
      if (!valid) break;
      ++depth;
      if (lsw_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (rng_.uniform() < std::exp(lsw_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);

      for (std::size_t d = 0; d < n; ++d) rho[d] = rho_bck[d] + rho_fwd[d];
      bool persist = criterion(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
      std::vector<double> ext(n);
      for (std::size_t d = 0; d < n; ++d) ext[d] = rho_bck[d] + p_fwd_bck[d];
      persist = persist && criterion(p_sharp_bck_bck, p_sharp_fwd_bck, ext);
      for (std::size_t d = 0; d < n; ++d) ext[d] = rho_fwd[d] + p_bck_fwd[d];
      persist = persist && criterion(p_sharp_bck_fwd, p_sharp_fwd_fwd, ext);
      if (!persist) break;
    }

    state_ = z_sample;
    IterationStats s;
    s.lp = state_.lp;
    s.accept_stat = n_leapfrog_ > 0 ? sum_metro_prob_ / n_leapfrog_ : 0.0;
    s.step_size = step_;
    s.tree_depth = depth;
    s.n_leapfrog = n_leapfrog_;
    s.divergent = divergent_;
    s.energy = hamiltonian(state_);
    s.max_energy_error = max_error_;
    return s;
  }

 private:
  static constexpr double kMaxDeltaH = 1000.0;

  void evaluate(State& z) const {
    try {
      z.lp = target_(std::span<const double>(z.q), &z.grad);
      if (std::isnan(z.lp)) z.lp = -kInf;
    } catch (const std::domain_error&) {
      z.lp = -kInf;
      z.grad.assign(z.q.size(), 0.0);
    } catch (const std::overflow_error&) {
      z.lp = -kInf;
      z.grad.assign(z.q.size(), 0.0);
    }
  }

  void sample_momentum(State& z) {
    for (std::size_t d = 0; d < z.p.size(); ++d) z.p[d] = rng_.normal() / std::sqrt(inv_metric_[d]);
  }

  [[nodiscard]] std::vector<double> sharp(const std::vector<double>& p) const {
    std::vector<double> out(p.size());
    for (std::size_t d = 0; d < p.size(); ++d) out[d] = inv_metric_[d] * p[d];
    return out;
  }

  [[nodiscard]] double hamiltonian(const State& z) const {
    double k = 0.0;
    for (std::size_t d = 0; d < z.p.size(); ++d) k += inv_metric_[d] * z.p[d] * z.p[d];
    const double h = -z.lp + 0.5 * k;
    return std::isnan(h) ? kInf : h;
  }

  void leapfrog(State& z, double eps) const {
    const std::size_t n = z.q.size();
    for (std::size_t d = 0; d < n; ++d) z.p[d] += 0.5 * eps * z.grad[d];
    for (std::size_t d = 0; d < n; ++d) z.q[d] += eps * inv_metric_[d] * z.p[d];
    for (double x : z.q)
      if (!std::isfinite(x)) {
        z.lp = -kInf;
        return;
      }
    evaluate(z);
    if (!std::isfinite(z.lp)) return;
    for (std::size_t d = 0; d < n; ++d) z.p[d] += 0.5 * eps * z.grad[d];
  }

  static bool criterion(const std::vector<double>& p_sharp_minus,
                        const std::vector<double>& p_sharp_plus, const std::vector<double>& rho) {
    double a = 0.0, b = 0.0;
    for (std::size_t d = 0; d < rho.size(); ++d) {
      a += p_sharp_plus[d] * rho[d];
      b += p_sharp_minus[d] * rho[d];
    }
    return a > 0.0 && b > 0.0;
  }

  bool build_tree(int depth, State& z_propose, std::vector<double>& p_sharp_beg,
                  std::vector<double>& p_sharp_end, std::vector<double>& rho,
                  std::vector<double>& p_beg, std::vector<double>& p_end, double h0, double sign,
                  double& log_sum_weight) {
    const std::size_t n = static_cast<std::size_t>(dim_);
    if (depth == 0) {
      leapfrog(state_, sign * step_);
      ++n_leapfrog_;
      const double h = hamiltonian(state_);
      const double err = std::isfinite(h) ? std::abs(h - h0) : kInf;
      max_error_ = std::max(max_error_, err);
      if (!std::isfinite(h) || h - h0 > kMaxDeltaH) divergent_ = true;
      log_sum_weight = log_sum_exp(log_sum_weight, h0 - h);
      sum_metro_prob_ += h0 - h > 0 ? 1.0 : std::exp(h0 - h);
      z_propose = state_;
      p_sharp_beg = sharp(state_.p);
      p_sharp_end = p_sharp_beg;
      for (std::size_t d = 0; d < n; ++d) rho[d] += state_.p[d];
      p_beg = state_.p;
      p_end = p_beg;
      return !divergent_;
    }

    // Initial subtree
    std::vector<double> p_init_end(n), p_sharp_init_end(n), rho_init(n, 0.0);
    double lsw_init = -kInf;
    if (!build_tree(depth - 1, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg,
                    p_init_end, h0, sign, lsw_init))
      return false;

    // Final subtree
    State z_propose_final = state_;
    std::vector<double> p_final_beg(n), p_sharp_final_beg(n), rho_final(n, 0.0);
    double lsw_final = -kInf;
    if (!build_tree(depth - 1, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final,
                    p_final_beg, p_end, h0, sign, lsw_final))
      return false;

    const double lsw_subtree = log_sum_exp(lsw_init, lsw_final);
    log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);
    if (lsw_final > lsw_subtree) {
      z_propose = z_propose_final;
    } else if (rng_.uniform() < std::exp(lsw_final - lsw_subtree)) {
      z_propose = z_propose_final;
    }

    std::vector<double> rho_subtree(n), ext(n);
    for (std::size_t d = 0; d < n; ++d) {
      rho_subtree[d] = rho_init[d] + rho_final[d];
      rho[d] += rho_subtree[d];
    }
    bool persist = criterion(p_sharp_beg, p_sharp_end, rho_subtree);
    for (std::size_t d = 0; d < n; ++d) ext[d] = rho_init[d] + p_final_beg[d];
    persist = persist && criterion(p_sharp_beg, p_sharp_final_beg, ext);
    for (std::size_t d = 0; d < n; ++d) ext[d] = rho_final[d] + p_init_end[d];
    persist = persist && criterion(p_sharp_init_end, p_sharp_end, ext);
    return persist;
  }

  const Target& target_;
  int dim_;
  const SamplerConfig& config_;
  Rng rng_;
  std::vector<double> inv_metric_;
  double step_ = 1.0;
  State state_;
  int n_leapfrog_ = 0;
  double sum_metro_prob_ = 0.0;
  bool divergent_ = false;
  double max_error_ = 0.0;
};

/// Runs `jobs` independent tasks on up to `threads` workers; exceptions are rethrown in job order.
template <class Job>
void parallel_for(int jobs, int threads, const Job& job) {
  int workers = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1, std::max(1, jobs));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
  std::atomic<int> next{0};
  auto work = [&] {
    for (int j = next++; j < jobs; j = next++) {
      try {
        job(j);
      } catch (...) {
        errors[static_cast<std::size_t>(j)] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// Samples `dim`-dimensional `target` (log density with gradient). Each chain owns the
/// random stream (seed, chain), so output does not depend on the thread count.
template <class Target>
Draws nuts_sample(const SamplerConfig& config, const Target& target, int dim) {
  config.validate();
  if (dim < 1) throw std::invalid_argument("target dimension must be at least 1");
  Draws out;
  out.n_chains = config.n_chains;
  out.n_draws = config.n_draws;
  out.dim = dim;
  out.values.resize(out.total() * static_cast<std::size_t>(dim));
  out.stats.resize(out.total());
  out.step_size.resize(static_cast<std::size_t>(config.n_chains));
  out.inv_metric.resize(static_cast<std::size_t>(config.n_chains));
  out.wall_seconds.resize(static_cast<std::size_t>(config.n_chains));

  detail::parallel_for(config.n_chains, config.threads, [&](int c) {
    const auto start = std::chrono::steady_clock::now();
    detail::NutsChain<Target> chain(target, dim, config, Rng(config.seed, static_cast<std::uint64_t>(c)));
    chain.initialize();
    if (config.fixed_step_size) {
      chain.set_step_size(*config.fixed_step_size);
    } else {
      chain.init_step_size();
      detail::StepSizeAdapter adapter(config.target_accept);
      adapter.restart(chain.step_size());
      detail::MetricWindows windows(config.n_warmup);
      for (int it = 0; it < config.n_warmup; ++it) {
        const IterationStats s = chain.transition();
        chain.set_step_size(adapter.learn(s.accept_stat));
        if (auto var = windows.learn(chain.state().q)) {
          chain.set_inv_metric(std::move(*var));
          chain.init_step_size();
          adapter.restart(chain.step_size());
        }
      }
      if (config.n_warmup > 0) chain.set_step_size(adapter.final_step());
    }
    for (int i = 0; i < config.n_draws; ++i) {
      const IterationStats s = chain.transition();
      const std::size_t row = static_cast<std::size_t>(c) * config.n_draws + i;
      out.stats[row] = s;
      std::copy(chain.state().q.begin(), chain.state().q.end(),
                out.values.begin() + static_cast<std::ptrdiff_t>(row * dim));
    }
    out.step_size[static_cast<std::size_t>(c)] = chain.step_size();
    out.inv_metric[static_cast<std::size_t>(c)] = chain.inv_metric();
    out.wall_seconds[static_cast<std::size_t>(c)] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  });
  return out;
}

/// Fits a model's posterior; the spec is attached to the draws.
inline Draws fit(const ModelSpec& spec, const Dataset& data, const SamplerConfig& config) {
  const Posterior post(spec, data);
  Draws d = nuts_sample(config, post, post.dim());
  d.spec = spec;
  return d;
}

}  // namespace bayeswork
