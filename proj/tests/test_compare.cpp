#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "bayeswork/compare.hpp"
#include "test_support.hpp"

using namespace bayeswork;
using Catch::Approx;

namespace {

std::vector<double> gpd_sample(std::uint64_t seed, double k, double sigma, int n) {
  Rng rng(seed);
  std::vector<double> x;
  for (int i = 0; i < n; ++i) x.push_back(gpd_quantile(rng.uniform(), k, sigma));
  return x;
}

Dataset m1_dataset(std::uint64_t seed, int rows) {
  Rng rng(seed);
  Dataset ds = testing::synthetic_design(rng, 3, 6, rows);
  const ModelSpec spec = ModelSpec::for_dataset(Variant::M1, ds);
  Params truth = Params::zeros(spec);
  truth.alpha = 2.5;
  truth.alpha_language << 0.4, -0.3, 0.1;
  truth.phi = 4.0;
  testing::fill_outcomes(rng, spec, truth, ds);
  return ds;
}

SamplerConfig quick_sampler(std::uint64_t seed) {
  SamplerConfig cfg;
  cfg.seed = seed;
  cfg.n_warmup = 500;
  return cfg;
}

// Fake log-likelihood matrix from a column generator.
template <class F>
LogLikMatrix make_matrix(std::size_t s, std::size_t n, F value) {
  LogLikMatrix m;
  m.n_draws = s;
  m.n_rows = n;
  for (std::size_t a = 0; a < s; ++a)
    for (std::size_t i = 0; i < n; ++i) m.values.push_back(value(a, i));
  return m;
}

double sum_exp(const std::vector<double>& lw) {
  double s = 0.0;
  for (double v : lw) s += std::exp(v);
  return s;
}

}  // namespace

TEST_CASE("gpd fit recovers the shape", "[compare][gpd][oracle]") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const GpdFit heavy = gpd_fit(gpd_sample(seed, 0.5, 1.0, 2000));
    CHECK(heavy.k >= 0.4);
    CHECK(heavy.k <= 0.6);
    CHECK(heavy.sigma == Approx(1.0).margin(0.15));
    const GpdFit expo = gpd_fit(gpd_sample(seed + 10, 0.0, 1.0, 2000));
    CHECK(std::abs(expo.k) <= 0.1);
  }
}

TEST_CASE("gpd fit edge cases", "[compare][gpd]") {
  const GpdFit flat = gpd_fit(std::vector<double>(50, 0.3));
  CHECK(flat.degenerate);
  CHECK(flat.k == -kInf);
  const GpdFit few = gpd_fit({1.0, 2.0, 3.0, 4.0});
  CHECK(few.insufficient);
  CHECK(gpd_quantile(0.5, 0.0, 2.0) == Approx(2.0 * std::log(2.0)));
  CHECK(psis_tail_length(4000) == 190);
  CHECK(psis_tail_length(100) == 20);
}

TEST_CASE("psis smoothing", "[compare][psis]") {
  SECTION("equal ratios give uniform weights") {
    const std::vector<double> flat(1000, -3.0);
    const PsisResult r = psis_smooth(flat);
    CHECK(r.degenerate);
    for (double v : r.log_weights) CHECK(v == Approx(-std::log(1000.0)).epsilon(1e-12));
  }
  SECTION("iid normal ratios are well behaved") {
    Rng rng(4);
    std::vector<double> lr;
    for (int i = 0; i < 4000; ++i) lr.push_back(rng.normal());
    const PsisResult r = psis_smooth(lr);
    CHECK(r.k < 0.5);
    CHECK(std::abs(sum_exp(r.log_weights) - 1.0) < 1e-12);
    for (double v : r.log_weights) CHECK(v <= 0.0);
  }
  SECTION("an extreme ratio is pulled down") {
    Rng rng(5);
    std::vector<double> lr;
    for (int i = 0; i < 4000; ++i) lr.push_back(rng.normal());
    lr[123] = *std::max_element(lr.begin(), lr.end()) + std::log(1e6);
    const double raw = lr[123] - log_sum_exp(lr);
    const PsisResult r = psis_smooth(lr);
    CHECK(r.log_weights[123] < raw);
    CHECK(std::abs(sum_exp(r.log_weights) - 1.0) < 1e-12);
  }
  CHECK_THROWS_AS(psis_smooth(std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("loo on the conjugate toy model matches the analytic leave-one-out", "[compare][loo][oracle]") {
  const double sigma = 8.0;
  Rng rng(6);
  std::vector<double> y;
  for (int i = 0; i < 20; ++i) y.push_back(rng.normal(175.0, sigma));
  const Dataset ds = make_toy_dataset(y);
  const ModelSpec spec = ModelSpec::toy(sigma);
  const Draws d = fit(spec, ds, quick_sampler(7));
  const LooResult r = loo(pointwise_loglik(spec, d, ds));

  double exact = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    double prec = 1.0 / (50.0 * 50.0), weighted = 170.0 / (50.0 * 50.0);
    for (std::size_t j = 0; j < y.size(); ++j)
      if (j != i) {
        prec += 1.0 / (sigma * sigma);
        weighted += y[j] / (sigma * sigma);
      }
    exact += normal_lpdf(y[i], weighted / prec, std::sqrt(1.0 / prec + sigma * sigma));
  }
  CHECK(std::abs(r.elpd_loo - exact) < 0.1);
  CHECK(r.n_high_k() == 0);
  CHECK(std::accumulate(r.pointwise.begin(), r.pointwise.end(), 0.0) == Approx(r.elpd_loo));
}

TEST_CASE("psis loo agrees with brute-force leave-one-out on M1", "[compare][loo][oracle][slow]") {
  const Dataset ds = m1_dataset(8, 20);
  const ModelSpec spec = ModelSpec::for_dataset(Variant::M1, ds);
  const Draws d = fit(spec, ds, quick_sampler(9));
  const LooResult r = loo(pointwise_loglik(spec, d, ds));
  for (double k : r.pareto_k) CHECK(k < kParetoKThreshold);

  double exact = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Dataset rest = ds;
    rest.rows.erase(rest.rows.begin() + static_cast<std::ptrdiff_t>(i));
    Dataset held = ds;
    held.rows = {ds.rows[i]};
    const Draws di = fit(spec, rest, quick_sampler(100 + i));
    const LogLikMatrix ll = pointwise_loglik(spec, di, held);
    exact += log_sum_exp(ll.column(0)) - std::log(static_cast<double>(ll.n_draws));
  }
  INFO("psis " << r.elpd_loo << " exact " << exact << " se " << r.se_elpd);
  CHECK(std::abs(r.elpd_loo - exact) <= std::max(0.5, r.se_elpd));
  CHECK(r.p_loo >= -0.5);
}

TEST_CASE("duplicating rows doubles elpd", "[compare][loo][property]") {
  const Dataset ds = m1_dataset(10, 30);
  const ModelSpec spec = ModelSpec::for_dataset(Variant::M1, ds);
  const Draws d = fit(spec, ds, quick_sampler(11));
  const LooResult once = loo(pointwise_loglik(spec, d, ds));
  Dataset twice = ds;
  twice.rows.insert(twice.rows.end(), ds.rows.begin(), ds.rows.end());
  const LooResult doubled = loo(pointwise_loglik(spec, d, twice));
  CHECK(doubled.elpd_loo == Approx(2.0 * once.elpd_loo).epsilon(0.02));

  const LogLikMatrix ll = pointwise_loglik(spec, d, ds);
  const WaicResult w = waic(ll);
  CHECK(std::abs(w.elpd_waic - once.elpd_loo) < once.se_elpd);
  CHECK(w.p_waic >= 0.0);
  CHECK(once.p_loo >= -0.5);

  // matrix rows sum to the joint likelihood of each draw
  const Posterior post(spec, ds);
  for (std::size_t s : {0u, 1234u, 3999u}) {
    double row = 0.0;
    for (std::size_t i = 0; i < ll.n_rows; ++i) row += ll.at(s, i);
    const auto u = d.point(static_cast<int>(s / 1000), static_cast<int>(s % 1000));
    CHECK(row == Approx(post(u, nullptr) - post.log_prior(u)).epsilon(1e-10));
  }
}

TEST_CASE("waic definitions", "[compare][waic]") {
  const LogLikMatrix flat = make_matrix(200, 5, [](std::size_t, std::size_t i) { return -1.0 - i; });
  const WaicResult w = waic(flat);
  CHECK(w.p_waic == 0.0);
  CHECK(w.elpd_waic == Approx(-15.0).epsilon(1e-12));

  Rng rng(12);
  const LogLikMatrix noisy = make_matrix(300, 8, [&](std::size_t, std::size_t) { return rng.normal(-2.0, 1.5); });
  CHECK(waic(noisy).p_waic >= 0.0);

  const LogLikMatrix one = make_matrix(1, 5, [](std::size_t, std::size_t) { return -1.0; });
  CHECK_THROWS_AS(loo(one), std::invalid_argument);
  CHECK_THROWS_AS(waic(one), std::invalid_argument);
}

TEST_CASE("comparison table", "[compare][table]") {
  Rng rng(13);
  auto fake = [&](double shift) {
    LooResult r;
    for (int i = 0; i < 50; ++i) r.pointwise.push_back(rng.normal(-3.0 + shift, 0.5));
    r.elpd_loo = std::accumulate(r.pointwise.begin(), r.pointwise.end(), 0.0);
    r.high_k.assign(50, false);
    return r;
  };
  const std::vector<NamedLoo> in = {{"M1", fake(-1.0)}, {"M3", fake(0.5)}, {"M2", fake(0.0)}};
  const ComparisonTable t = compare(in);
  REQUIRE(t.rows.size() == 3);
  CHECK(t.rows[0].model == "M3");
  CHECK(t.rows[1].model == "M2");
  CHECK(t.rows[2].model == "M1");
  CHECK_FALSE(t.rows[0].elpd_diff);
  CHECK(*t.rows[1].elpd_diff == Approx(in[2].result.elpd_loo - in[1].result.elpd_loo));
  CHECK(*t.rows[2].elpd_diff == Approx(in[0].result.elpd_loo - in[2].result.elpd_loo));
  CHECK(*t.rows[2].elpd_diff_best == Approx(in[0].result.elpd_loo - in[1].result.elpd_loo));
  CHECK(*t.rows[2].se_diff > 0.0);

  SECTION("input order does not matter") {
    const ComparisonTable u = compare({in[2], in[0], in[1]});
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(u.rows[k].model == t.rows[k].model);
      CHECK(u.rows[k].elpd_diff == t.rows[k].elpd_diff);
      CHECK(u.rows[k].se_diff == t.rows[k].se_diff);
    }
  }
  SECTION("identical results differ by zero") {
    const ComparisonTable same = compare({{"a", in[0].result}, {"b", in[0].result}});
    CHECK(*same.rows[1].elpd_diff == 0.0);
    CHECK(*same.rows[1].se_diff == 0.0);
  }
  SECTION("mismatched rows") {
    LooResult shorter = in[0].result;
    shorter.pointwise.pop_back();
    CHECK_THROWS_AS(compare({in[0], {"short", shorter}}), std::invalid_argument);
  }
}
