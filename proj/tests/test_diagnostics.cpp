#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "bayeswork/diagnostics.hpp"
#include "bayeswork/random.hpp"

using namespace bayeswork;
using Catch::Approx;

namespace {

using Chains = std::vector<std::vector<double>>;

Chains iid_chains(std::uint64_t seed, int m, int n, double shift_last = 0.0) {
  Rng rng(seed);
  Chains out(static_cast<std::size_t>(m));
  for (int c = 0; c < m; ++c)
    for (int i = 0; i < n; ++i) out[c].push_back(rng.normal() + (c == m - 1 ? shift_last : 0.0));
  return out;
}

Chains ar1_chains(std::uint64_t seed, int m, int n, double rho) {
  Rng rng(seed);
  Chains out(static_cast<std::size_t>(m));
  const double innov = std::sqrt(1.0 - rho * rho);
  for (int c = 0; c < m; ++c) {
    double x = rng.normal();
    for (int i = 0; i < n; ++i) {
      out[c].push_back(x);
      x = rho * x + innov * rng.normal();
    }
  }
  return out;
}

Draws to_draws(const Chains& chains) {
  Draws d;
  d.n_chains = static_cast<int>(chains.size());
  d.n_draws = static_cast<int>(chains.front().size());
  d.dim = 1;
  for (const auto& c : chains) d.values.insert(d.values.end(), c.begin(), c.end());
  d.stats.resize(d.total());
  d.step_size.assign(chains.size(), 0.5);
  return d;
}

}  // namespace

TEST_CASE("split rhat examples", "[diagnostics][rhat]") {
  const Chains one = iid_chains(1, 1, 1000);
  // Identical chains whose second half repeats the first: every split half is the
  // same sequence, so B = 0 and R-hat = sqrt((n - 1) / n) with n = 500.
  std::vector<double> repeated(one[0].begin(), one[0].begin() + 500);
  repeated.insert(repeated.end(), repeated.begin(), repeated.end());
  const Chains same(4, repeated);
  CHECK(split_rhat(same) == Approx(std::sqrt(499.0 / 500.0)).epsilon(1e-12));

  Chains apart = iid_chains(2, 2, 1000, 5.0);
  CHECK(split_rhat(apart) > 1.5);

  CHECK(split_rhat(iid_chains(3, 4, 1000)) < 1.01);
  CHECK(std::isnan(split_rhat(one)));
  CHECK(split_rhat(Chains(4, std::vector<double>(100, 2.0))) == 1.0);
}

TEST_CASE("split rhat catches a within-chain trend", "[diagnostics][rhat]") {
  Chains trend(4);
  Rng rng(8);
  for (auto& c : trend)
    for (int i = 0; i < 1000; ++i) c.push_back(i / 100.0 + rng.normal());
  CHECK(split_rhat(trend) > 1.5);
}

TEST_CASE("ess of iid draws is close to the draw count", "[diagnostics][ess]") {
  for (std::uint64_t seed : {4u, 5u, 6u}) {
    const double e = ess(iid_chains(seed, 4, 1000));
    CHECK(e >= 3600.0);
    CHECK(e <= 4400.0);
  }
}

TEST_CASE("ess of AR(1) chains follows (1 - rho) / (1 + rho)", "[diagnostics][ess]") {
  const double expected = 20000.0 * (1.0 - 0.9) / (1.0 + 0.9);
  const double e = ess(ar1_chains(9, 4, 5000, 0.9));
  CHECK(std::abs(e - expected) <= 0.25 * expected);
}

TEST_CASE("fft autocovariance matches the direct sum", "[diagnostics][ess]") {
  const auto x = ar1_chains(10, 1, 257, 0.5)[0];
  const auto acov = detail::autocovariance(x);
  const double m = mean(x);
  for (std::size_t t : {0u, 1u, 5u, 100u, 256u}) {
    double direct = 0.0;
    for (std::size_t i = 0; i + t < x.size(); ++i) direct += (x[i] - m) * (x[i + t] - m);
    CHECK(acov[t] == Approx(direct / x.size()).margin(1e-12));
  }
}

TEST_CASE("constant chains report the draw count", "[diagnostics][ess]") {
  const Chains flat(4, std::vector<double>(250, 3.0));
  CHECK(ess(flat) == 1000.0);
  const Diagnostics d = diagnose(to_draws(flat));
  REQUIRE(d.parameters.size() == 1);
  CHECK(d.parameters[0].degenerate);
  CHECK(d.parameters[0].ess_ratio == 1.0);
  CHECK_FALSE(d.warnings.empty());
}

TEST_CASE("verdict rules", "[diagnostics][verdict]") {
  Draws good = to_draws(iid_chains(12, 4, 1000));
  const Diagnostics ok = diagnose(good);
  CHECK(ok.pass);
  CHECK(ok.max_rhat < 1.01);
  CHECK(ok.min_ess_ratio >= 0.9);
  CHECK(ok.min_ess_ratio <= 1.1);

  SECTION("one divergent transition fails") {
    good.stats[17].divergent = true;
    const Diagnostics bad = diagnose(good);
    CHECK_FALSE(bad.pass);
    CHECK(bad.divergences == 1);
    REQUIRE(bad.reasons.size() == 1);
    CHECK(bad.reasons[0].rfind("divergences", 0) == 0);
  }
  SECTION("two-mode chains fail on rhat") {
    const Diagnostics bad = diagnose(to_draws(iid_chains(13, 4, 1000, 6.0)));
    CHECK_FALSE(bad.pass);
    CHECK(bad.max_rhat > 1.1);
    CHECK(bad.reasons[0].rfind("rhat", 0) == 0);
  }
  SECTION("sticky chains fail on ess") {
    const Diagnostics bad = diagnose(to_draws(ar1_chains(14, 4, 1000, 0.995)));
    CHECK_FALSE(bad.pass);
  }
  SECTION("single chain has no rhat") {
    const Diagnostics single = diagnose(to_draws(iid_chains(15, 1, 1000)));
    CHECK(std::isnan(single.max_rhat));
    CHECK_FALSE(single.pass);
  }
}

TEST_CASE("adding divergences never turns fail into pass", "[diagnostics][property]") {
  Rng rng(16);
  for (int trial = 0; trial < 30; ++trial) {
    Draws d = to_draws(ar1_chains(100 + trial, 4, 200, rng.uniform(0.0, 0.99)));
    for (auto& s : d.stats) s.divergent = rng.uniform() < 0.002;
    const bool before = diagnose(d).pass;
    d.stats[rng.index(d.stats.size())].divergent = true;
    const bool after = diagnose(d).pass;
    CHECK_FALSE(after);
    if (!before) CHECK_FALSE(after);
  }
}
