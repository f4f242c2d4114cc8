#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "effectmod/errors.hpp"
#include "effectmod/sensitivity.hpp"
#include "study_fixture.hpp"

using effectmod::Direction;
using effectmod::GammaValue;
using effectmod::InputError;
using effectmod::TailMethod;

namespace {

// Independent tail oracle: direct term-by-term summation of the binomial
// mass in long double. Usable for n up to a few thousand.
long double tail_by_summation(long n, long k, double p) {
  if (k <= 0) return 1.0L;
  if (k > n) return 0.0L;
  long double sum = 0.0L;
  for (long j = n; j >= k; --j) {
    long double log_term = std::lgamma((long double)n + 1) -
                           std::lgamma((long double)j + 1) -
                           std::lgamma((long double)(n - j) + 1) +
                           (long double)j * std::log((long double)p) +
                           (long double)(n - j) * std::log1p(-(long double)p);
    sum += std::exp(log_term);
  }
  return sum;
}

effectmod::DiscordantSummary make_summary(long n_control_only, long n_treated_only) {
  effectmod::DiscordantSummary s;
  s.group_id = "g";
  s.n_discordant = n_control_only + n_treated_only;
  s.n_control_only = n_control_only;
  s.n_treated_only = n_treated_only;
  return s;
}

}  // namespace

TEST_CASE("exact tail matches direct summation on a dense small sweep") {
  for (long n = 1; n <= 40; ++n) {
    for (long k = 0; k <= n; ++k) {
      for (double gamma : {1.0, 1.25, 2.0}) {
        double p = gamma / (1.0 + gamma);
        double got = effectmod::binomial_upper_tail(n, k, p);
        double want = (double)tail_by_summation(n, k, p);
        REQUIRE(std::fabs(got - want) <= 1e-12);
      }
    }
  }
}

TEST_CASE("exact tail matches direct summation at larger sizes") {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 50; ++rep) {
    long n = 1 + (long)(rng() % 1000);
    long k = (long)(rng() % (n + 1));
    double p = 0.05 + 0.9 * ((rng() >> 11) * 0x1.0p-53);
    double got = effectmod::binomial_upper_tail(n, k, p);
    double want = (double)tail_by_summation(n, k, p);
    REQUIRE(std::fabs(got - want) <= 1e-12);
  }
}

TEST_CASE("tail edge cases") {
  CHECK(effectmod::binomial_upper_tail(10, 0, 0.3) == 1.0);
  CHECK(effectmod::binomial_upper_tail(10, -2, 0.3) == 1.0);
  CHECK(effectmod::binomial_upper_tail(10, 11, 0.3) == 0.0);
  CHECK(effectmod::binomial_upper_tail(1, 1, 0.5) == doctest::Approx(0.5));
}

TEST_CASE("upper bound at gamma 1 is the plain binomial half-chance tail") {
  GammaValue g1(1.0);
  CHECK(g1.p_plus() == doctest::Approx(0.5));
  double p = effectmod::mcnemar_upper_pvalue(2, 2, g1);
  CHECK(p == doctest::Approx(0.25));
}

TEST_CASE("reference splits reproduce the frozen bounds") {
  GammaValue g1(1.0);
  double p1 = effectmod::mcnemar_upper_pvalue(210, 123, g1);
  CHECK(std::fabs(p1 - 0.008) <= 0.002);

  GammaValue g115(1.15);
  double p2 = effectmod::mcnemar_upper_pvalue(293, 177, g115);
  CHECK(std::fabs(p2 - 0.010) <= 0.002);

  double pooled = effectmod::mcnemar_upper_pvalue(1968, 1087, g115);
  CHECK(std::fabs(pooled - 0.06294099265569827) <= 1e-9);
  CHECK(std::fabs(pooled - 0.063) <= 0.002);
}

TEST_CASE("no discordant pairs gives no evidence") {
  CHECK(effectmod::mcnemar_upper_pvalue(0, 0, GammaValue(1.3)) == 1.0);
}

TEST_CASE("preconditions are rejected") {
  CHECK_THROWS_AS(GammaValue(0.99), InputError);
  CHECK_THROWS_AS(effectmod::mcnemar_upper_pvalue(5, 6, GammaValue(1.0)), InputError);
  CHECK_THROWS_AS(effectmod::mcnemar_upper_pvalue(-1, 0, GammaValue(1.0)), InputError);
  CHECK_THROWS_AS(effectmod::mcnemar_upper_pvalue(5, -1, GammaValue(1.0)), InputError);
}

TEST_CASE("bound is nondecreasing in gamma") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 100; ++rep) {
    long d = 1 + (long)(rng() % 400);
    long t = (long)(rng() % (d + 1));
    double prev = -1.0;
    for (double gamma = 1.0; gamma <= 2.5; gamma += 0.1) {
      double p = effectmod::mcnemar_upper_pvalue(d, t, GammaValue(gamma));
      REQUIRE(p >= prev - 1e-12);
      prev = p;
    }
  }
}

TEST_CASE("bound decreases as the evidence count grows") {
  GammaValue g(1.2);
  double prev = 2.0;
  for (long t = 0; t <= 50; ++t) {
    double p = effectmod::mcnemar_upper_pvalue(50, t, g);
    REQUIRE(p <= prev + 1e-12);
    prev = p;
  }
}

TEST_CASE("normal approximation tracks the exact tail at moderate counts") {
  for (int gi = 0; gi < 6; ++gi) {
    GammaValue g(fixture::kMortGammas[gi]);
    for (const auto& grp : fixture::kGroups) {
      double exact = effectmod::mcnemar_upper_pvalue(grp.d_mort, grp.t_mort, g);
      double approx = effectmod::mcnemar_upper_pvalue(grp.d_mort, grp.t_mort, g,
                                                      TailMethod::normal_approx);
      CHECK(std::fabs(exact - approx) <= 0.002);
    }
  }
}

TEST_CASE("evidence count follows the direction") {
  auto s = make_summary(177, 116);
  CHECK(effectmod::evidence_count(s, Direction::benefit) == 177);
  CHECK(effectmod::evidence_count(s, Direction::harm) == 116);
}

TEST_CASE("discordant odds ratio") {
  auto s = make_summary(177, 116);
  auto ratio = effectmod::mcnemar_odds_ratio(s);
  REQUIRE(ratio.has_value());
  CHECK(*ratio == doctest::Approx(177.0 / 116.0));

  auto even = effectmod::mcnemar_odds_ratio(make_summary(9, 9));
  REQUIRE(even.has_value());
  CHECK(*even == doctest::Approx(1.0));

  CHECK_FALSE(effectmod::mcnemar_odds_ratio(make_summary(4, 0)).has_value());
}

TEST_CASE("gamma grid synthesizes a pooled row and keeps order") {
  std::vector<effectmod::DiscordantSummary> summaries;
  auto a = make_summary(123, 87);
  a.group_id = "1";
  auto b = make_summary(177, 116);
  b.group_id = "2";
  summaries = {a, b};

  auto grid = effectmod::gamma_grid_bounds(summaries, {1.0, 1.1});
  REQUIRE(grid.group_ids == std::vector<std::string>{"1", "2", "pooled"});
  REQUIRE(grid.gammas == std::vector<double>{1.0, 1.1});
  REQUIRE(grid.p_upper.size() == 2);
  REQUIRE(grid.p_upper[0].size() == 3);

  double pooled = effectmod::mcnemar_upper_pvalue(210 + 293, 123 + 177, GammaValue(1.0));
  CHECK(grid.p_upper[0][2] == doctest::Approx(pooled));
  CHECK(grid.gamma_index(1.1) == 1);
  CHECK_THROWS_AS(grid.gamma_index(1.05), InputError);
}

TEST_CASE("gamma grid requires a strictly ascending grid") {
  std::vector<effectmod::DiscordantSummary> summaries = {make_summary(5, 3)};
  CHECK_THROWS_AS(effectmod::gamma_grid_bounds(summaries, {1.1, 1.1}), InputError);
  CHECK_THROWS_AS(effectmod::gamma_grid_bounds(summaries, {1.2, 1.1}), InputError);
  CHECK_THROWS_AS(effectmod::gamma_grid_bounds(summaries, {}), InputError);
}

TEST_CASE("grid serializations carry every cell") {
  std::vector<effectmod::DiscordantSummary> summaries = {make_summary(10, 2)};
  auto grid = effectmod::gamma_grid_bounds(summaries, {1.0, 1.5});
  std::string csv = effectmod::grid_to_csv(grid);
  CHECK(csv.find("gamma") != std::string::npos);
  CHECK(csv.find("pooled") != std::string::npos);
  std::string json = effectmod::grid_to_json(grid);
  CHECK(json.find("\"gammas\"") != std::string::npos);
}

TEST_CASE("amplification reference points") {
  CHECK(std::fabs(effectmod::amplify(1.17, 2.0) - 1.61) <= 0.005);
  CHECK(std::fabs(effectmod::amplify(1.5, 4.0) - 2.0) <= 0.005);
  CHECK(effectmod::amplify(1.0, 3.0) == doctest::Approx(1.0));
}

TEST_CASE("amplification is symmetric and round-trips") {
  std::mt19937_64 rng(23);
  for (int rep = 0; rep < 200; ++rep) {
    double gamma = 1.0 + 1.5 * ((rng() >> 11) * 0x1.0p-53);
    double lambda = gamma + 0.1 + 3.0 * ((rng() >> 11) * 0x1.0p-53);
    double delta = effectmod::amplify(gamma, lambda);
    REQUIRE(delta > gamma);
    REQUIRE(std::fabs(effectmod::amplify(gamma, delta) - lambda) <= 1e-9);
  }
}

TEST_CASE("amplification preconditions") {
  CHECK_THROWS_AS(effectmod::amplify(0.9, 2.0), InputError);
  CHECK_THROWS_AS(effectmod::amplify(1.5, 1.5), InputError);
  CHECK_THROWS_AS(effectmod::amplify(1.5, 1.2), InputError);
}
