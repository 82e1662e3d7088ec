#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "bayeswork/analyze.hpp"
#include "test_support.hpp"

using namespace bayeswork;
using Catch::Approx;

namespace {

struct Fixture {
  Dataset ds;
  ModelSpec m2;
  ModelSpec m3;
};

Fixture fixture() {
  Rng rng(31);
  Fixture f{testing::synthetic_design(rng, 4, 12, 48), {}, {}};
  f.m2 = ModelSpec::for_dataset(Variant::M2, f.ds);
  f.m3 = ModelSpec::for_dataset(Variant::M3, f.ds);
  return f;
}

// A synthetic posterior: n copies of one parameter set.
std::vector<Params> constant_posterior(const Params& p, std::size_t n) { return std::vector<Params>(n, p); }

Scenario scenario(double commits, double insertions, double age, double devs) {
  Scenario s;
  s.commits = commits;
  s.insertions = insertions;
  s.age = age;
  s.devs = devs;
  return s;
}

}  // namespace

TEST_CASE("scenario predictions approach the Poisson limit", "[analyze][scenario][oracle]") {
  const Fixture f = fixture();
  for (const ModelSpec& spec : {f.m2, f.m3}) {
    Params p = Params::zeros(spec);
    p.alpha = std::log(5.0);
    p.phi = 1e9;
    p.sigma_gamma = 0.0;
    Rng rng(1);
    const auto pred = simulate_scenario(rng, spec, constant_posterior(p, 20000), f.ds, scenario(10, 100, 30, 2));
    REQUIRE(pred.counts.size() == 4);
    for (const auto& c : pred.counts) {
      CHECK(c.size() == 20000);
      CHECK(mean(c) == Approx(5.0).epsilon(0.02));
      for (double v : c) CHECK((v >= 0.0 && v == std::floor(v)));
    }
  }
}

TEST_CASE("scenario predictions are deterministic and validated", "[analyze][scenario]") {
  const Fixture f = fixture();
  Rng prior_rng(2);
  std::vector<Params> post;
  for (int s = 0; s < 50; ++s) {
    Params p = sample_prior(prior_rng, f.m3);
    p.alpha = 1.0;
    p.phi = 2.0;
    post.push_back(p);
  }
  const Scenario sc = scenario(21900, 219000, 730, 30);
  Rng a(3), b(3);
  const auto x = simulate_scenario(a, f.m3, post, f.ds, sc);
  const auto y = simulate_scenario(b, f.m3, post, f.ds, sc);
  CHECK(x.counts == y.counts);
  CHECK_FALSE(x.note.empty());

  Scenario one = sc;
  one.language = 2;
  Rng c(3);
  const auto single = simulate_scenario(c, f.m3, post, f.ds, one);
  REQUIRE(single.counts.size() == 1);
  CHECK(single.languages[0] == "L2");
  CHECK(single.counts[0] == x.counts[2]);

  Rng r(4);
  CHECK_THROWS_AS(simulate_scenario(r, f.m3, post, f.ds, scenario(0, 1, 1, 1)), DataError);
  CHECK_THROWS_AS(simulate_scenario(r, ModelSpec::for_dataset(Variant::M1, f.ds),
                                    std::vector<Params>(3, Params::zeros(ModelSpec::for_dataset(Variant::M1, f.ds))),
                                    f.ds, sc),
                  std::invalid_argument);
}

TEST_CASE("raising one language intercept raises its counts", "[analyze][scenario][property]") {
  const Fixture f = fixture();
  Params p = Params::zeros(f.m2);
  p.alpha = 1.5;
  p.beta = {0.1, 0.05, 0.0, 0.2};
  p.phi = 3.0;
  Params up = p;
  up.alpha_language(1) += 0.5;
  const Scenario sc = scenario(50, 500, 100, 3);
  Rng a(5), b(5);
  const auto base = simulate_scenario(a, f.m2, constant_posterior(p, 8000), f.ds, sc);
  const auto shifted = simulate_scenario(b, f.m2, constant_posterior(up, 8000), f.ds, sc);
  CHECK(mean(shifted.counts[1]) > mean(base.counts[1]));
  CHECK(shifted.counts[0] == base.counts[0]);
}

TEST_CASE("language ranking", "[analyze][rank]") {
  LanguagePrediction pred;
  pred.languages = {"Go", "C", "Ruby"};
  pred.counts = {{1, 2, 3, 4, 5}, {5, 6, 7, 8, 9}, {1, 2, 3, 4, 5}};
  const Ranking r = rank_languages(pred);
  CHECK(r.rows[0].language == "C");
  CHECK(r.rows[1].language == "Go");
  CHECK(r.rows[2].language == "Ruby");
  CHECK(r.rows[0].rank == 1);
  CHECK(r.rows[0].median == 7.0);
  CHECK(r.tie);

  SECTION("medians tie, means break it") {
    pred.counts[2] = {1, 2, 3, 4, 50};
    const Ranking s = rank_languages(pred);
    CHECK(s.rows[1].language == "Ruby");
    CHECK_FALSE(s.tie);
  }
  SECTION("a common increasing transform keeps the order") {
    Rng rng(6);
    LanguagePrediction random;
    for (int l = 0; l < 6; ++l) {
      random.languages.push_back("L" + std::to_string(l));
      std::vector<double> v;
      for (int s = 0; s < 101; ++s) v.push_back(std::floor(std::exp(rng.normal(l * 0.3, 1.0))));
      random.counts.push_back(v);
    }
    LanguagePrediction transformed = random;
    for (auto& v : transformed.counts)
      for (double& x : v) x = std::log1p(x) * 3.0 + 7.0;
    const Ranking a = rank_languages(random);
    const Ranking b = rank_languages(transformed);
    for (std::size_t k = 0; k < a.rows.size(); ++k) CHECK(a.rows[k].language == b.rows[k].language);
  }
  pred.counts.resize(1);
  pred.languages.resize(1);
  CHECK_THROWS_AS(rank_languages(pred), std::invalid_argument);
}

TEST_CASE("pairwise effects", "[analyze][effect]") {
  const Fixture f = fixture();
  Rng prior_rng(7);
  std::vector<Params> post;
  for (int s = 0; s < 40; ++s) {
    Params p = sample_prior(prior_rng, f.m3);
    p.alpha = 0.5;
    p.beta = {0.05, 0.05, 0.05, 0.05};
    p.phi = 2.0;
    post.push_back(p);
  }

  SECTION("identical languages give zero differences") {
    Rng rng(8);
    const PairwiseDiff d = pairwise_effect(rng, f.m3, post, f.ds, 1, 1);
    for (double x : d.samples) CHECK(x == 0.0);
    CHECK(d.prob_positive == 0.0);
  }
  SECTION("swapping languages negates every sample") {
    Rng a(9), b(9);
    const PairwiseDiff d12 = pairwise_effect(a, f.m3, post, f.ds, 0, 2);
    const PairwiseDiff d21 = pairwise_effect(b, f.m3, post, f.ds, 2, 0);
    REQUIRE(d12.samples.size() == post.size() * f.ds.size());
    for (std::size_t k = 0; k < d12.samples.size(); ++k) CHECK(d12.samples[k] == -d21.samples[k]);
    CHECK(d12.prob_positive == d21.prob_negative);
    std::size_t above = 0;
    for (double x : d12.samples) above += x > 0.0 ? 1 : 0;
    CHECK(d12.prob_positive == static_cast<double>(above) / d12.samples.size());
  }
  SECTION("a clearly worse language dominates") {
    std::vector<Params> shifted = post;
    for (auto& p : shifted) {
      p.beta_language.setZero();
      p.alpha_language(3) = p.alpha_language(0) + 2.0;
    }
    Rng rng(10);
    PairwiseOptions opts;
    opts.reuse_project = true;
    const PairwiseDiff d = pairwise_effect(rng, f.m3, shifted, f.ds, 3, 0, opts);
    CHECK(d.prob_positive > 0.95);
    opts.sample_counts = true;
    const PairwiseDiff noisy = pairwise_effect(rng, f.m3, shifted, f.ds, 3, 0, opts);
    CHECK(noisy.prob_positive > 0.5);
    for (double x : noisy.samples) CHECK(x == std::floor(x));
  }
  Rng rng(11);
  CHECK_THROWS_AS(pairwise_effect(rng, f.m3, post, f.ds, 0, 9), std::invalid_argument);
}

TEST_CASE("conditional effects", "[analyze][conditional]") {
  const Fixture f = fixture();
  const std::vector<double> grid = {10, 100, 1000, 10000, 100000};
  const Scenario anchor = scenario(50, 500, 100, 3);

  Params p = Params::zeros(f.m2);
  p.alpha = 1.2;
  const EffectCurve flat = conditional_effect(f.m2, constant_posterior(p, 10), f.ds, 1, grid, anchor);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    CHECK(flat.mean[g] == Approx(std::exp(1.2)));
    CHECK(flat.low[g] == Approx(std::exp(1.2)));
  }

  // With group effects at zero the curve is exp(alpha + beta . x) exactly.
  p.beta = {0.0, 0.3, 0.0, 0.0};
  const EffectCurve rising = conditional_effect(f.m2, constant_posterior(p, 10), f.ds, 1, grid, anchor);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const auto x = anchor.log_predictors(f.ds);
    const double eta = 1.2 + 0.3 * std::log(grid[g]);
    CHECK(x[1] == std::log(500.0));
    CHECK(rising.mean[g] == Approx(std::exp(eta)).epsilon(1e-12));
    if (g > 0) CHECK(rising.mean[g] > rising.mean[g - 1]);
  }

  // Slope uncertainty widens the band away from the anchor.
  Rng rng(12);
  std::vector<Params> post;
  for (int s = 0; s < 2000; ++s) {
    Params q = p;
    q.beta[1] = rng.normal(0.3, 0.05);
    post.push_back(q);
  }
  const EffectCurve band = conditional_effect(f.m2, post, f.ds, 1, grid, anchor);
  for (std::size_t g = 1; g < grid.size(); ++g) CHECK(band.high[g] - band.low[g] > band.high[g - 1] - band.low[g - 1]);
  CHECK_THROWS_AS(conditional_effect(f.m2, post, f.ds, 1, std::vector<double>{}, anchor), std::invalid_argument);
}

TEST_CASE("credible intervals", "[analyze][interval]") {
  const Interval same = credible_interval(std::vector<double>(100, 0.25), 0.95);
  CHECK(same.low == 0.25);
  CHECK(same.high == 0.25);
  std::vector<double> v;
  for (int i = 0; i <= 1000; ++i) v.push_back(i);
  const Interval ninety = credible_interval(v, 0.9);
  CHECK(ninety.low == Approx(50.0));
  CHECK(ninety.high == Approx(950.0));
  CHECK_THROWS_AS(credible_interval(v, 1.0), std::invalid_argument);

  const Dataset ds = make_toy_dataset({170, 171, 172, 169, 175});
  SamplerConfig cfg;
  cfg.n_warmup = 200;
  cfg.n_draws = 200;
  const Draws d = fit(ModelSpec::toy(5.0), ds, cfg);
  const Interval mu = credible_interval(d, "mu", 0.95);
  CHECK(mu.low < 171.4);
  CHECK(mu.high > 171.4);
  CHECK_THROWS_AS(credible_interval(d, "nope", 0.95), std::invalid_argument);
}

TEST_CASE("project variability", "[analyze][projects]") {
  const Fixture f = fixture();
  Params p = Params::zeros(f.m3);
  p.alpha = 2.0;
  p.beta = {0.1, 0.0, 0.0, 0.1};
  p.phi = 5.0;

  SECTION("no project spread gives one shared distribution") {
    p.sigma_gamma = 0.0;
    Rng rng(13);
    const auto sim = simulate_projects(rng, f.m3, constant_posterior(p, 20000), f.ds, 5);
    const double m0 = mean(sim.counts[0]);
    for (const auto& c : sim.counts) CHECK(mean(c) == Approx(m0).epsilon(0.05));
  }
  SECTION("wide project spread separates projects") {
    p.sigma_gamma = 1.5;
    Rng rng(14);
    const auto sim = simulate_projects(rng, f.m3, constant_posterior(p, 2000), f.ds, 10);
    std::vector<double> medians;
    for (const auto& c : sim.counts) medians.push_back(median(c) + 1.0);
    CHECK(*std::max_element(medians.begin(), medians.end()) / *std::min_element(medians.begin(), medians.end()) > 2.0);
    Rng again(14);
    CHECK(simulate_projects(again, f.m3, constant_posterior(p, 2000), f.ds, 10).counts == sim.counts);
  }
  Rng rng(15);
  CHECK_THROWS_AS(simulate_projects(rng, f.m3, constant_posterior(p, 10), f.ds, 0), std::invalid_argument);
  CHECK_THROWS_AS(simulate_projects(rng, f.m2, constant_posterior(Params::zeros(f.m2), 10), f.ds, 3),
                  std::invalid_argument);
}

TEST_CASE("project sd overlay", "[analyze][projects]") {
  const Fixture f = fixture();
  Rng rng(16);
  std::vector<Params> post;
  for (int s = 0; s < 3000; ++s) {
    Params p = Params::zeros(f.m3);
    p.sigma_gamma = std::exp(rng.normal(std::log(0.8), 0.04));
    post.push_back(p);
  }
  const SdOverlay o = posterior_vs_prior_sd(f.m3, post);
  CHECK(trapezoid(o.grid, o.prior) == Approx(1.0).margin(1e-6));
  CHECK(trapezoid(o.grid, o.posterior) == Approx(1.0).margin(1e-3));
  CHECK(o.grid.front() == 0.0);
  CHECK(o.posterior.front() == 0.0);
  for (double v : o.posterior) CHECK(v >= 0.0);
  CHECK(o.prior_sd == Approx(std::sqrt(1.0 - std::numbers::pi / 4.0)));
  CHECK(o.posterior_sd * 10.0 < o.prior_sd);
}
