#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "adapt/sim.hpp"

using namespace adapt;

namespace {

// One-sample Kolmogorov-Smirnov statistic against U(0, 1).
double ks_uniform(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double d = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - v[i], v[i] - static_cast<double>(i) / n});
  }
  return d;
}

// Asymptotic 1% critical value of the KS statistic.
double ks_critical_1pct(std::size_t n) { return 1.6276 / std::sqrt(static_cast<double>(n)); }

std::vector<double> draw(const PValueSampler& s, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> out(n);
  for (double& v : out) v = s(rng);
  return out;
}

// Independent enumeration of the "drop max index, stop at sum <= 1" rule.
long double drop_max_oracle(std::size_t n, long double rho) {
  long double total = 0.0L;
  for (unsigned m = 0; m < (1U << n); ++m) {
    std::size_t size = n;
    auto sum_prefix = [&](std::size_t k) {
      std::size_t s = 0;
      for (std::size_t i = 0; i < k; ++i) s += (m >> i) & 1U;
      return s;
    };
    while (size > 0 && sum_prefix(size) > 1) --size;
    const std::size_t ones = sum_prefix(n);
    const long double prob = std::pow(rho, static_cast<long double>(ones)) *
                             std::pow(1.0L - rho, static_cast<long double>(n - ones));
    total += prob * static_cast<long double>(1 + size) / static_cast<long double>(1 + sum_prefix(size));
  }
  return total;
}

}  // namespace

TEST_CASE("example 1 grid and region truth") {
  const HypothesisSet h = generate_example1(Region::circle, 1);
  REQUIRE(h.size() == 2500);
  REQUIRE(h.truth());
  std::size_t expected = 0;
  for (int a = 0; a < 50; ++a) {
    for (int b = 0; b < 50; ++b) {
      const double u = -100.0 + 200.0 * a / 49.0;
      const double v = -100.0 + 200.0 * b / 49.0;
      if (u * u + v * v <= 900.0) ++expected;
    }
  }
  const auto& t = *h.truth();
  CHECK(static_cast<std::size_t>(std::count(t.begin(), t.end(), true)) == expected);
  CHECK(h.covariates()(0, 0) == -100.0);
  CHECK(h.covariates()(2499, 1) == 100.0);
  for (Region r : {Region::ellipse, Region::ring}) {
    const auto& tr = *generate_example1(r, 1).truth();
    const auto k = std::count(tr.begin(), tr.end(), true);
    CHECK(k > 0);
    CHECK(k < 2500);
  }
}

TEST_CASE("example 1 null-only p-values are uniform") {
  const HypothesisSet h = generate_example1(Region::empty, 4);
  CHECK(ks_uniform(h.pvalues()) < ks_critical_1pct(h.size()));
}

TEST_CASE("generators are deterministic under the seed") {
  const auto a = generate_example1(Region::ring, 9);
  const auto b = generate_example1(Region::ring, 9);
  const auto c = generate_example1(Region::ring, 10);
  CHECK(a.pvalues() == b.pvalues());
  CHECK(a.pvalues() != c.pvalues());
  Example2Params small;
  small.n = 200;
  small.d = 10;
  const auto e = generate_example2(small, 3);
  const auto f = generate_example2(small, 3);
  CHECK(e.data.pvalues() == f.data.pvalues());
  CHECK(e.data.covariates() == f.data.covariates());
}

TEST_CASE("example 2 intercept gives the target mean non-null fraction") {
  const Example2Data d = generate_example2({}, 12);
  CHECK(d.data.size() == 3000);
  CHECK(d.data.dim() == 100);
  const double mean = std::accumulate(d.pi1.begin(), d.pi1.end(), 0.0) / static_cast<double>(d.pi1.size());
  CHECK(std::abs(mean - 0.3) <= 1e-8);
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    const double expect = std::max(2.0 * d.data.covariates()(static_cast<Eigen::Index>(i), 0) +
                                       2.0 * d.data.covariates()(static_cast<Eigen::Index>(i), 1),
                                   1.0);
    REQUIRE(d.mu[i] == doctest::Approx(expect).epsilon(1e-14));
  }
}

TEST_CASE("example 2 with beta = 0 has uniform non-null p-values") {
  Example2Params params;
  params.beta = {0.0, 0.0};
  const Example2Data d = generate_example2(params, 5);
  std::vector<double> nonnull;
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    CHECK(d.mu[i] == 1.0);
    if ((*d.data.truth())[i]) nonnull.push_back(d.data.pvalue(i));
  }
  CHECK(ks_uniform(nonnull) < ks_critical_1pct(nonnull.size()));
}

TEST_CASE("example 2 non-null -log p has mean mu within buckets") {
  Example2Params params;
  params.n = 20000;
  params.d = 2;
  const Example2Data d = generate_example2(params, 8);
  const std::vector<double> edges{1.0, 1.5, 2.0, 2.5, 3.0, 4.01};
  for (std::size_t k = 0; k + 1 < edges.size(); ++k) {
    double sum = 0.0;
    double sq = 0.0;
    double mu_sum = 0.0;
    std::size_t m = 0;
    for (std::size_t i = 0; i < d.data.size(); ++i) {
      if (!(*d.data.truth())[i] || d.mu[i] < edges[k] || d.mu[i] >= edges[k + 1]) continue;
      const double y = -std::log(d.data.pvalue(i));
      sum += y;
      sq += y * y;
      mu_sum += d.mu[i];
      ++m;
    }
    REQUIRE(m > 50);
    const double mean = sum / static_cast<double>(m);
    const double se = std::sqrt((sq / static_cast<double>(m) - mean * mean) / static_cast<double>(m));
    CHECK(std::abs(mean - mu_sum / static_cast<double>(m)) <= 3.0 * se);
  }
}

TEST_CASE("scoring conventions") {
  std::vector<bool> truth(20, false);
  for (std::size_t i = 0; i < 10; ++i) truth[i] = true;
  std::vector<std::size_t> all_signals{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  Score s = score(all_signals, truth);
  CHECK(s.fdp == 0.0);
  CHECK(*s.power == 1.0);
  s = score(std::vector<std::size_t>{}, truth);
  CHECK(s.fdp == 0.0);
  CHECK(*s.power == 0.0);
  s = score(std::vector<std::size_t>{0, 1, 15}, truth);
  CHECK(s.fdp == doctest::Approx(1.0 / 3.0));
  CHECK(*s.power == doctest::Approx(0.2));
  CHECK_FALSE(score(std::vector<std::size_t>{1}, std::vector<bool>(3, false)).power);
}

TEST_CASE("lemma bound: hand-checked rule at n = 3") {
  const Lemma2Report r = lemma2_check(3, 0.5, lemma2_rule("drop_max_index"));
  CHECK(r.holds());
  CHECK(r.bound == 2.0L);
  CHECK(std::abs(static_cast<double>(r.lhs - drop_max_oracle(3, 0.5))) < 1e-15);
}

TEST_CASE("lemma bound: degenerate cases") {
  for (const auto& rule : lemma2_rules()) {
    const Lemma2Report empty = lemma2_check(4, 0.5, rule, std::vector<std::uint8_t>(4, 0));
    CHECK(empty.lhs == 1.0L);
    const Lemma2Report sure = lemma2_check(5, 1.0, rule);
    CHECK(sure.lhs == 1.0L);
  }
}

TEST_CASE("lemma bound holds for every shipped rule") {
  REQUIRE(lemma2_rules().size() >= 3);
  for (const auto& rule : lemma2_rules()) {
    for (double rho : {0.3, 0.5, 0.9}) {
      for (std::size_t n = 1; n <= 8; ++n) {
        const Lemma2Report r = lemma2_check(n, rho, rule);
        CHECK_MESSAGE(r.holds(), rule.id << " rho=" << rho << " n=" << n);
      }
    }
  }
  CHECK(std::abs(static_cast<double>(lemma2_check(8, 0.3, lemma2_rule("drop_max_index")).lhs -
                                     drop_max_oracle(8, 0.3))) < 1e-12);
}

TEST_CASE("rules that read hidden bits are rejected") {
  CHECK_THROWS_AS(lemma2_check(3, 0.5, lemma2_peeking_rule()), NonMeasurableError);
  CHECK_THROWS_AS(lemma2_check(21, 0.5, lemma2_rule("drop_to_empty")), ConfigError);
}

TEST_CASE("fuzzy MLR p-values") {
  // theta = theta0 with a continuous statistic: exactly uniform.
  CHECK(ks_uniform(draw(fuzzy_mlr_gaussian(0.0, 0.0), 20000, 1)) < ks_critical_1pct(20000));
  CHECK(mirror_conservatism_score(fuzzy_mlr_gaussian(-0.5, 0.0), 20, 100000, 2).passes());
  // Binomial statistic at the null: the randomization makes it uniform.
  CHECK(ks_uniform(draw(fuzzy_mlr_binomial(12, 0.3, 0.3), 20000, 3)) < ks_critical_1pct(20000));
  CHECK(mirror_conservatism_score(fuzzy_mlr_binomial(12, 0.2, 0.3), 20, 100000, 4).passes());
  // Alternatives are anti-conservative.
  CHECK_FALSE(mirror_conservatism_score(fuzzy_mlr_gaussian(1.0, 0.0), 20, 100000, 5).passes());
}

TEST_CASE("grid-uniform permutation p-values are mirror-conservative") {
  const auto g = grid_uniform(996);
  const auto v = draw(g, 1000, 6);
  for (double p : v) {
    const double k = p * 997.0;
    CHECK(std::abs(k - std::round(k)) < 1e-9);
    CHECK(p > 0.0);
    CHECK(p <= 1.0);
  }
  CHECK(mirror_conservatism_score(g, 20, 100000, 7).passes());
}

TEST_CASE("region names round-trip") {
  for (Region r : {Region::circle, Region::ellipse, Region::ring, Region::empty})
    CHECK(parse_region(region_name(r)) == r);
  CHECK_THROWS_AS(parse_region("square"), ConfigError);
}
