#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "bayeswork/model.hpp"
#include "test_support.hpp"

using namespace bayeswork;
using Catch::Approx;

namespace {

Dataset small_dataset(Variant v, std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds = testing::synthetic_design(rng, 3, 5, 15);
  ModelSpec spec = ModelSpec::for_dataset(v == Variant::Toy ? Variant::M3 : v, ds);
  Params truth = Params::zeros(spec);
  truth.alpha = 1.0;
  truth.beta = {0.3, 0.05, 0.05, 0.1};
  truth.phi = 3.0;
  testing::fill_outcomes(rng, spec, truth, ds);
  for (auto& row : ds.rows) row.height = rng.normal(172.0, 9.0);
  return ds;
}

std::vector<double> central_difference(const Posterior& post, std::vector<double> u, double h) {
  std::vector<double> g(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double keep = u[i];
    u[i] = keep + h;
    const double up = post(u, nullptr);
    u[i] = keep - h;
    const double down = post(u, nullptr);
    u[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("unconstrained dimension per variant", "[model][dim]") {
  CHECK(dim(ModelSpec::toy()) == 2);
  CHECK(dim(ModelSpec::toy(5.0)) == 1);
  ModelSpec m1;
  m1.variant = Variant::M1;
  m1.n_languages = 17;
  CHECK(dim(m1) == 20);
  ModelSpec m2 = m1;
  m2.variant = Variant::M2;
  CHECK(dim(m2) == 24);
  ModelSpec m3;
  m3.variant = Variant::M3;
  m3.n_languages = 2;
  m3.n_projects = 3;
  // alpha 1, beta 4, raw language effects 10, projects 3, group sds 5, sigma_gamma 1,
  // correlation 10, phi 1
  CHECK(dim(m3) == 35);
  m3.n_languages = 17;
  m3.n_projects = 729;
  CHECK(dim(m3) == 1 + 4 + 5 * 17 + 729 + 5 + 1 + 10 + 1);
}

TEST_CASE("constrain examples", "[model][transform]") {
  const Params toy = constrain(ModelSpec::toy(), std::vector<double>{170.0, 0.0});
  CHECK(toy.mu == 170.0);
  CHECK(toy.sigma == 1.0);

  ModelSpec m3;
  m3.variant = Variant::M3;
  m3.n_languages = 2;
  m3.n_projects = 3;
  std::vector<double> u(static_cast<std::size_t>(dim(m3)), 0.3);
  const Layout lay = layout(m3);
  for (int i = 0; i < lay.n_corr; ++i) u[static_cast<std::size_t>(lay.corr + i)] = 0.0;
  const Params p = constrain(m3, u);
  CHECK((p.corr_chol - Eigen::MatrixXd::Identity(5, 5)).norm() == 0.0);

  ModelSpec m1;
  m1.variant = Variant::M1;
  m1.n_languages = 3;
  std::vector<double> v(static_cast<std::size_t>(dim(m1)), 0.0);
  const Layout l1 = layout(m1);
  v[static_cast<std::size_t>(l1.log_group_sd)] = std::log(2.0);
  v[static_cast<std::size_t>(l1.group_raw + 1)] = 0.5;
  CHECK(constrain(m1, v).alpha_language(1) == Approx(1.0).epsilon(1e-14));
}

TEST_CASE("constrain/unconstrain round trip", "[model][transform][property]") {
  Rng rng(11);
  for (Variant v : {Variant::Toy, Variant::M1, Variant::M2, Variant::M3}) {
    ModelSpec spec = v == Variant::Toy ? ModelSpec::toy() : ModelSpec{};
    spec.variant = v;
    if (v != Variant::Toy) {
      spec.n_languages = 4;
      spec.n_projects = 6;
    }
    for (int trial = 0; trial < 50; ++trial) {
      const Params p = sample_prior(rng, spec);
      const std::vector<double> u = unconstrain(spec, p);
      const std::vector<double> a = flatten(spec, p);
      const std::vector<double> b = flatten(spec, constrain(spec, u));
      REQUIRE(a.size() == b.size());
      for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(std::abs(a[i] - b[i]) <= 1e-10 * std::max(1.0, std::abs(a[i])));
      // and the other direction, from arbitrary coordinates
      std::vector<double> w(u.size());
      for (double& x : w) x = rng.uniform(-3.0, 3.0);
      const std::vector<double> w2 = unconstrain(spec, constrain(spec, w));
      for (std::size_t i = 0; i < w.size(); ++i) CHECK(std::abs(w[i] - w2[i]) <= 1e-9);
    }
  }
}

TEST_CASE("log prior closed forms", "[model][prior]") {
  const ModelSpec toy = ModelSpec::toy();
  // Normal(170, 50) at its mean, HalfCauchy(0, 1) at 1 (= log(1/pi)), log-Jacobian ln 1 = 0.
  const double mu_part = -std::log(50.0 * std::sqrt(2.0 * std::numbers::pi));
  CHECK(mu_part == Approx(-4.83096).margin(1e-5));
  CHECK(log_prior(toy, std::vector<double>{170.0, 0.0}) ==
        Approx(mu_part - std::log(std::numbers::pi)).epsilon(1e-13));

  ModelSpec m1;
  m1.variant = Variant::M1;
  m1.n_languages = 2;
  const Layout lay = layout(m1);
  std::vector<double> u(static_cast<std::size_t>(lay.dim), 0.0);  // alpha 0, raw 0, sigma 1, phi 1
  const double weibull_at_one = std::log(2.0) - 1.0;
  CHECK(weibull_at_one == Approx(-0.3069).margin(1e-4));
  const double expected = normal_lpdf(0.0, 0.0, 5.0) + 2 * normal_lpdf(0.0, 0.0, 1.0) +
                          weibull_at_one + gamma_lpdf(1.0, 0.01, 0.01);
  CHECK(log_prior(m1, u) == Approx(expected).epsilon(1e-13));

  std::vector<double> shifted = u;
  shifted[static_cast<std::size_t>(lay.group_raw)] = 1.0;
  CHECK(log_prior(m1, shifted) - log_prior(m1, u) == Approx(-0.5).epsilon(1e-13));
}

TEST_CASE("LKJ normalizer integrates the K=2 density", "[model][prior]") {
  // K = 2: chol = [[1,0],[r, sqrt(1-r^2)]]; density over r is (1 - r^2)^(eta-1) / c.
  for (double eta : {1.0, 2.0, 3.5}) {
    const double log_c = lkj_log_normalizer(2, eta);
    const int n = 200000;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const double r = -1.0 + (i + 0.5) * 2.0 / n;
      acc += std::pow(1.0 - r * r, eta - 1.0);
    }
    acc *= 2.0 / n;
    CHECK(std::exp(-log_c) * acc == Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("LKJ(2) draws have the known marginal correlation variance", "[model][prior]") {
  // Off-diagonal marginals of LKJ(eta) in K dims: Beta(eta-1+K/2, same) on (-1, 1),
  // variance 1 / (2 eta + K - 1) = 1/8 for eta = 2, K = 5.
  Rng rng(5);
  double acc = 0.0, acc2 = 0.0;
  int n = 0;
  for (int d = 0; d < 40000; ++d) {
    const Eigen::MatrixXd chol = lkj_cholesky_draw(rng, 5, 2.0);
    const Eigen::MatrixXd corr = chol * chol.transpose();
    for (int i = 0; i < 5; ++i) CHECK(std::abs(corr(i, i) - 1.0) < 1e-12);
    for (int i = 1; i < 5; ++i)
      for (int j = 0; j < i; ++j) {
        acc += corr(i, j);
        acc2 += corr(i, j) * corr(i, j);
        ++n;
      }
  }
  CHECK(acc / n == Approx(0.0).margin(0.005));
  CHECK(acc2 / n == Approx(0.125).epsilon(0.02));
}

TEST_CASE("negative binomial log pmf", "[model][nb]") {
  CHECK(nb_logpmf(3, 2.0, 1.0) == Approx(std::log((1.0 / 3.0) * std::pow(2.0 / 3.0, 3))).epsilon(1e-13));
  CHECK(nb_logpmf(3, 2.0, 1.0) == Approx(std::log(8.0 / 81.0)).epsilon(1e-14));
  CHECK(nb_logpmf(0, 2.0, 1.0) == Approx(-1.09861).margin(1e-5));
  CHECK_THROWS_AS(nb_logpmf(-1, 2.0, 1.0), std::domain_error);
  CHECK_THROWS_AS(nb_logpmf(1, 0.0, 1.0), std::domain_error);
  CHECK_THROWS_AS(nb_logpmf(1, 2.0, -1.0), std::domain_error);

  SECTION("normalization over y = 0..1e4") {
    for (double lambda : {0.5, 5.0, 10.0, 50.0})
      for (double phi : {0.5, 1.0, 5.0}) {
        double total = 0.0;
        for (int y = 0; y <= 10000; ++y) total += std::exp(nb_logpmf(y, lambda, phi));
        CHECK(std::abs(total - 1.0) < 1e-9);
      }
  }
}

TEST_CASE("NB simulation matches mean and variance", "[model][simulate]") {
  ModelSpec spec;
  spec.variant = Variant::M1;
  spec.n_languages = 1;
  Params p = Params::zeros(spec);
  p.alpha = std::log(5.0);
  p.phi = 2.0;
  std::vector<PreparedRow> design(1000000);
  Rng rng(99);
  const auto y = simulate_outcomes(rng, spec, p, design);
  CHECK(mean(y) == Approx(5.0).epsilon(0.02));
  CHECK(variance(y) == Approx(17.5).epsilon(0.05));

  Rng a(7), b(7);
  std::vector<PreparedRow> small(50);
  CHECK(simulate_outcomes(a, spec, p, small) == simulate_outcomes(b, spec, p, small));

  p.alpha = -20.0;
  const auto zeros = simulate_outcomes(rng, spec, p, std::vector<PreparedRow>(10000));
  CHECK(std::all_of(zeros.begin(), zeros.end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("linear predictor nesting", "[model][likelihood]") {
  ModelSpec m1;
  m1.variant = Variant::M1;
  m1.n_languages = 3;
  Params p = Params::zeros(m1);
  p.alpha = 1.0;
  p.alpha_language(2) = 0.5;
  PreparedRow row;
  row.language_index = 2;
  row.x = {7, 8, 9, 10};
  CHECK(linear_predictor(m1, p, row) == 1.5);

  ModelSpec m2 = m1;
  m2.variant = Variant::M2;
  Params q = Params::zeros(m2);
  q.beta = {0.1, 0, 0, 0};
  row.x = {2, 5, 5, 5};
  CHECK(linear_predictor(m2, q, row) == Approx(0.2).epsilon(1e-15));

  row.language_index = 7;
  CHECK_THROWS_AS(linear_predictor(m2, q, row), std::out_of_range);
}

TEST_CASE("zeroed extra effects reproduce the simpler model", "[model][likelihood][property]") {
  Rng rng(3);
  const Dataset ds = small_dataset(Variant::M3, 21);
  const ModelSpec m1 = ModelSpec::for_dataset(Variant::M1, ds);
  const ModelSpec m2 = ModelSpec::for_dataset(Variant::M2, ds);
  const ModelSpec m3 = ModelSpec::for_dataset(Variant::M3, ds);
  for (int trial = 0; trial < 10; ++trial) {
    Params p2 = sample_prior(rng, m2);
    Params p3 = Params::zeros(m3);
    p3.alpha = p2.alpha;
    p3.beta = p2.beta;
    p3.alpha_language = p2.alpha_language;
    p3.phi = p2.phi;
    CHECK(log_likelihood_pointwise(m3, p3, ds) == log_likelihood_pointwise(m2, p2, ds));
    Params p1 = p2;
    p2.beta = {};
    CHECK(log_likelihood_pointwise(m2, p2, ds) == log_likelihood_pointwise(m1, p1, ds));
  }
}

TEST_CASE("pointwise log likelihood examples", "[model][likelihood]") {
  ModelSpec m1;
  m1.variant = Variant::M1;
  m1.n_languages = 1;
  Params p = Params::zeros(m1);
  p.alpha = std::log(2.0);
  p.phi = 1.0;
  Dataset ds;
  ds.language_names = {"C"};
  ds.project_names = {"p"};
  PreparedRow row;
  row.bugs = 3;
  ds.rows.push_back(row);
  const auto ll = log_likelihood_pointwise(m1, p, ds);
  REQUIRE(ll.size() == 1);
  CHECK(ll[0] == Approx(std::log(8.0 / 81.0)).epsilon(1e-13));

  const Dataset toy_data = make_toy_dataset({170.0});
  Params t;
  t.mu = 170.0;
  t.sigma = 1.0;
  CHECK(log_likelihood_pointwise(ModelSpec::toy(), t, toy_data)[0] == Approx(-0.91894).margin(1e-5));
}

TEST_CASE("unconstrained and natural routes agree", "[model][likelihood]") {
  Rng rng(8);
  const Dataset ds = small_dataset(Variant::M3, 4);
  for (Variant v : {Variant::M1, Variant::M2, Variant::M3}) {
    const ModelSpec spec = ModelSpec::for_dataset(v, ds);
    const Posterior post(spec, ds);
    std::vector<double> u(static_cast<std::size_t>(post.dim()));
    for (double& x : u) x = rng.uniform(-2, 2);
    const auto a = post.pointwise(u);
    const auto b = log_likelihood_pointwise(spec, constrain(spec, u), ds);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == Approx(b[i]).epsilon(1e-12));
    double total = 0.0;
    for (double x : a) total += x;
    CHECK(post(u, nullptr) == Approx(total + post.log_prior(u)).epsilon(1e-12));
  }
}

TEST_CASE("analytic gradient matches central finite differences", "[model][gradient]") {
  const Dataset ds = small_dataset(Variant::M3, 17);
  Rng rng(1234);
  std::vector<ModelSpec> specs = {ModelSpec::toy(), ModelSpec::toy(8.0),
                                  ModelSpec::for_dataset(Variant::M1, ds),
                                  ModelSpec::for_dataset(Variant::M2, ds),
                                  ModelSpec::for_dataset(Variant::M3, ds)};
  for (const ModelSpec& spec : specs) {
    const Posterior post(spec, ds);
    double worst = 0.0;
    for (int point = 0; point < 20; ++point) {
      std::vector<double> u(static_cast<std::size_t>(post.dim()));
      for (double& x : u) x = rng.uniform(-2.0, 2.0);
      if (spec.is_toy()) u[0] = rng.uniform(150.0, 190.0);
      std::vector<double> grad;
      const double value = post(u, &grad);
      REQUIRE(std::isfinite(value));
      const auto fd = central_difference(post, u, 1e-5);
      for (std::size_t i = 0; i < u.size(); ++i) {
        const double rel = std::abs(grad[i] - fd[i]) / std::max(1.0, std::abs(fd[i]));
        worst = std::max(worst, rel);
      }
    }
    INFO("variant " << to_string(spec.variant));
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("log prior is finite over a wide box", "[model][prior][property]") {
  const Dataset ds = small_dataset(Variant::M3, 2);
  Rng rng(77);
  for (Variant v : {Variant::M1, Variant::M2, Variant::M3}) {
    const Posterior post(ModelSpec::for_dataset(v, ds), ds);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> u(static_cast<std::size_t>(post.dim()));
      for (double& x : u) x = rng.uniform(-8.0, 8.0);
      std::vector<double> g;
      CHECK(std::isfinite(post(u, &g)));
      CHECK(std::all_of(g.begin(), g.end(), [](double x) { return std::isfinite(x); }));
    }
  }
}

TEST_CASE("toy gradient vanishes at the conjugate posterior mode", "[model][gradient]") {
  const double sigma = 8.0;
  const std::vector<double> heights = {160, 171, 180, 175, 168, 183, 158};
  const Dataset ds = make_toy_dataset(heights);
  const double prior_precision = 1.0 / (50.0 * 50.0);
  const double data_precision = heights.size() / (sigma * sigma);
  double sum = 0.0;
  for (double h : heights) sum += h;
  const double mode = (170.0 * prior_precision + sum / (sigma * sigma)) / (prior_precision + data_precision);
  const auto vg = log_posterior_and_grad(ModelSpec::toy(sigma), std::vector<double>{mode}, ds);
  CHECK(std::abs(vg.gradient[0]) < 1e-10);
}

TEST_CASE("likelihood additivity across disjoint datasets", "[model][likelihood]") {
  const Dataset all = small_dataset(Variant::M3, 31);
  Dataset a = all, b = all;
  a.rows.assign(all.rows.begin(), all.rows.begin() + 7);
  b.rows.assign(all.rows.begin() + 7, all.rows.end());
  Rng rng(2);
  for (Variant v : {Variant::M1, Variant::M2, Variant::M3}) {
    const ModelSpec spec = ModelSpec::for_dataset(v, all);
    std::vector<double> u(static_cast<std::size_t>(dim(spec)));
    for (double& x : u) x = rng.uniform(-1.5, 1.5);
    const double lp_all = log_posterior_and_grad(spec, u, all).value;
    const double lp_a = log_posterior_and_grad(spec, u, a).value;
    const double lp_b = log_posterior_and_grad(spec, u, b).value;
    CHECK(std::abs(lp_all - lp_a - lp_b + log_prior(spec, u)) < 1e-9);
  }
}

TEST_CASE("prior draws", "[model][prior]") {
  Rng rng(42);
  const ModelSpec toy = ModelSpec::toy();
  std::vector<double> mus;
  for (int i = 0; i < 100000; ++i) mus.push_back(sample_prior(rng, toy).mu);
  CHECK(mean(mus) == Approx(170.0).margin(1.0));
  CHECK(sd(mus) == Approx(50.0).margin(1.0));

  std::vector<double> w;
  for (int i = 0; i < 100000; ++i) w.push_back(weibull_draw(rng, 2.0, 1.0));
  CHECK(mean(w) == Approx(std::sqrt(std::numbers::pi) / 2.0).epsilon(0.01));

  ModelSpec m1;
  m1.variant = Variant::M1;
  m1.n_languages = 1;
  bool all_positive = true;
  for (int i = 0; i < 1000000; ++i) {
    const Params p = sample_prior(rng, m1);
    all_positive = all_positive && p.sigma_alpha > 0 && p.phi > 0;
  }
  CHECK(all_positive);
}
