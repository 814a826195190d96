#pragma once

// Simulation scenarios, scoring, and generators for the validity checks.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adapt/core.hpp"

namespace adapt {

enum class Region { circle, ellipse, ring, empty };

Region parse_region(std::string_view name);
std::string_view region_name(Region r);
bool in_region(Region r, double x, double y);

/// 50 x 50 grid over [-100, 100]^2; z ~ N(2, 1) inside the region and N(0, 1)
/// outside; p = 1 - Phi(z).
HypothesisSet generate_example1(Region region, std::uint64_t seed, std::size_t grid = 50,
                                double signal = 2.0);

struct Example2Params {
  std::size_t n = 3000;
  std::size_t d = 100;
  double target_pi = 0.3;
  /// Leading coefficients; the rest are zero.
  std::vector<double> theta{3.0, 3.0};
  std::vector<double> beta{2.0, 2.0};
};

struct Example2Data {
  HypothesisSet data;
  double theta0 = 0.0;
  std::vector<double> pi1;
  std::vector<double> mu;
};

/// x ~ U(0,1)^d, logit pi1 = theta0 + x'theta with theta0 set so mean pi1 = target,
/// mu = max(x'beta, 1), non-null p = U^mu so that E[-log p] = mu.
Example2Data generate_example2(const Example2Params& params, std::uint64_t seed);

/// Solves mean_i sigmoid(theta0 + offsets_i) = target for theta0.
double solve_intercept(std::span<const double> offsets, double target);

struct Score {
  double fdp = 0.0;
  std::optional<double> power;
};

Score score(std::span<const std::size_t> rejections, const std::vector<bool>& truth);

/// Randomized p-value for a one-sided test with statistic T and null survival
/// G0: G0(T+) + U (G0(T) - G0(T+)).
PValueSampler fuzzy_mlr_gaussian(double theta, double theta0);
/// T ~ Binomial(trials, q), null q0.
PValueSampler fuzzy_mlr_binomial(std::size_t trials, double q, double q0);
/// Permutation p-value with `permutations` draws: uniform on {1, ..., K+1} / (K+1).
PValueSampler grid_uniform(std::size_t permutations);

/// Exhaustive check of E[(1 + |C_t|) / (1 + sum_{C_t} b)] <= 1/rho at a stopping time.
/// Rules see C_t, sum_{C_t} b and the b_i outside C_t only.
class NonMeasurableError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class LemmaView {
 public:
  LemmaView(std::size_t t, const std::vector<std::uint8_t>& in_c, const std::vector<std::uint8_t>& b);

  std::size_t t() const { return t_; }
  std::size_t n() const { return in_c_.size(); }
  bool in_c(std::size_t i) const { return in_c_[i] != 0; }
  std::size_t size_c() const { return size_c_; }
  std::size_t sum_c() const { return sum_c_; }
  /// b_i for i outside C_t; throws NonMeasurableError inside.
  bool b(std::size_t i) const;

 private:
  std::size_t t_;
  const std::vector<std::uint8_t>& in_c_;
  const std::vector<std::uint8_t>& b_;
  std::size_t size_c_ = 0;
  std::size_t sum_c_ = 0;
};

struct LemmaRule {
  std::string id;
  /// Returns C_{t+1} as membership flags; must be a subset of C_t.
  std::function<std::vector<std::uint8_t>(const LemmaView&)> shrink;
  std::function<bool(const LemmaView&)> stop;
};

const std::vector<LemmaRule>& lemma2_rules();
const LemmaRule& lemma2_rule(std::string_view id);
/// A rule that reads hidden b_i; lemma2_check rejects it.
LemmaRule lemma2_peeking_rule();

struct Lemma2Report {
  long double lhs = 0.0L;
  long double bound = 0.0L;
  bool holds() const { return lhs <= bound; }
};

Lemma2Report lemma2_check(std::size_t n, double rho, const LemmaRule& rule,
                          std::optional<std::vector<std::uint8_t>> c0 = std::nullopt);

}  // namespace adapt
