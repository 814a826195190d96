#include <doctest.h>

#include <algorithm>
#include <random>
#include <vector>

#include "adapt/baselines.hpp"
#include "adapt/core.hpp"

using namespace adapt;

namespace {

using Idx = std::vector<std::size_t>;

// Brute-force Barber-Candes: try every candidate s and keep the largest feasible one.
Idx bc_scan(const std::vector<double>& p, double alpha) {
  double best = -1.0;
  for (double q : p) {
    const double s = std::min(q, 1.0 - q);
    std::size_t A = 0;
    std::size_t R = 0;
    for (double v : p) {
      if (v >= 1.0 - s) ++A;
      else if (v <= s) ++R;
    }
    if ((1.0 + static_cast<double>(A)) / static_cast<double>(std::max<std::size_t>(R, 1)) <= alpha)
      best = std::max(best, s);
  }
  Idx out;
  if (best < 0.0) return out;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= best && p[i] < 0.5) out.push_back(i);
  }
  return out;
}

bool subset(const Idx& a, const Idx& b) { return std::includes(b.begin(), b.end(), a.begin(), a.end()); }

}  // namespace

TEST_CASE("BH examples") {
  CHECK(bh(std::vector<double>{0.01, 0.02, 0.03, 0.5}, 0.1).rejections == Idx{0, 1, 2});
  CHECK(bh(std::vector<double>{1.0, 1.0, 1.0}, 0.1).rejections.empty());
  CHECK(bh(std::vector<double>{0.05}, 0.1).rejections == Idx{0});
  CHECK(bh(std::vector<double>{}, 0.1).rejections.empty());
}

TEST_CASE("Storey pi0 and the adjusted level") {
  // (1 + 2) / (4 * 0.5) = 1.5, capped.
  const std::vector<double> small{0.01, 0.02, 0.6, 0.8};
  CHECK(storey_pi0(small) == 1.0);
  CHECK(storey_bh(small, 0.1).rejections == bh(small, 0.1).rejections);

  std::vector<double> half;
  for (int i = 0; i < 50; ++i) half.push_back(1e-6 * (i + 1));
  for (int i = 0; i < 50; ++i) half.push_back((i + 0.5) / 50.0);
  const double above = static_cast<double>(std::count_if(half.begin(), half.end(), [](double v) { return v > 0.5; }));
  CHECK(storey_pi0(half) == doctest::Approx((1.0 + above) / 50.0).epsilon(1e-15));
  CHECK(storey_pi0(half) == doctest::Approx(0.52));
  // Storey at alpha equals BH at alpha / pi0.
  CHECK(storey_bh(half, 0.1).rejections == bh(half, 0.1 / storey_pi0(half)).rejections);
}

TEST_CASE("Barber-Candes examples") {
  const BaselineResult r = barber_candes(std::vector<double>{0.01, 0.02, 0.97}, 0.5);
  CHECK(r.rejections == Idx{0, 1});
  CHECK(r.threshold == 0.02);
  CHECK(barber_candes(std::vector<double>{0.6, 0.7, 0.99}, 0.5).rejections.empty());
}

TEST_CASE("Barber-Candes agrees with an exhaustive threshold scan") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + rep % 40;
    std::vector<double> p(n);
    for (double& v : p) v = u(rng) < 0.4 ? 0.05 * u(rng) : u(rng);
    for (double alpha : {0.1, 0.3, 0.5, 1.0}) CHECK(barber_candes(p, alpha).rejections == bc_scan(p, alpha));
  }
}

TEST_CASE("rejection sets are monotone in alpha and BH only rejects p <= alpha") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> p(80);
    for (double& v : p) v = u(rng) < 0.3 ? 0.01 * u(rng) : u(rng);
    Idx prev_bh, prev_st, prev_bc;
    for (double alpha = 0.01; alpha <= 0.5; alpha += 0.01) {
      const Idx a = bh(p, alpha).rejections;
      const Idx b = storey_bh(p, alpha).rejections;
      const Idx c = barber_candes(p, alpha).rejections;
      CHECK(subset(prev_bh, a));
      CHECK(subset(prev_st, b));
      CHECK(subset(prev_bc, c));
      for (std::size_t i : a) CHECK(p[i] <= alpha);
      prev_bh = a;
      prev_st = b;
      prev_bc = c;
    }
  }
}

TEST_CASE("Barber-Candes is invariant to input order") {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> p(60);
    for (double& v : p) v = u(rng) < 0.3 ? 0.02 * u(rng) : u(rng);
    std::vector<std::size_t> perm(p.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> q(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) q[i] = p[perm[i]];
    Idx mapped;
    for (std::size_t j : barber_candes(q, 0.2).rejections) mapped.push_back(perm[j]);
    std::sort(mapped.begin(), mapped.end());
    CHECK(mapped == barber_candes(p, 0.2).rejections);
  }
}

TEST_CASE("input validation") {
  CHECK_THROWS_AS(bh(std::vector<double>{1.5}, 0.1), DataError);
  CHECK_THROWS_AS(bh(std::vector<double>{0.5}, 0.0), ConfigError);
  CHECK_THROWS_AS(storey_pi0(std::vector<double>{0.5}, 1.0), ConfigError);
}
