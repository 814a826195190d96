#pragma once

// One-parameter exponential families on p-values in mean parameterization,
// h(p; mu) = exp{eta(mu) g(p) - A(mu)}, and the two-group mixture
// f(p) = pi1 h(p; mu) + (1 - pi1) built from them.

#include <string>
#include <string_view>

namespace adapt {

enum class Family { beta_mixture, gaussian_mixture };

Family parse_family(std::string_view name);
std::string_view family_name(Family f);

class ExponentialFamilySpec {
 public:
  constexpr ExponentialFamilySpec() = default;
  constexpr explicit ExponentialFamilySpec(Family f) : family_(f) {}

  Family family() const { return family_; }
  std::string_view name() const { return family_name(family_); }

  /// Sufficient statistic: -log p (beta) or Phi^{-1}(1 - p) (gaussian).
  double g(double p) const;
  double eta(double mu) const;
  /// Log partition under the mean parameterization, A(mu).
  double log_partition(double mu) const;

  /// Smallest mean for which h is strictly decreasing in p; fitted means are
  /// clamped to [mu_floor(), inf).
  double mu_floor() const;
  double clamp_mu(double mu) const;
  /// Values at which h(.; mu) is a proper density (beta: mu > 0, gaussian: finite).
  bool admissible(double mu) const;

  double log_density(double p, double mu) const;
  double density(double p, double mu) const;

  friend bool operator==(ExponentialFamilySpec a, ExponentialFamilySpec b) {
    return a.family_ == b.family_;
  }

 private:
  Family family_ = Family::beta_mixture;
};

double mixture_density(const ExponentialFamilySpec& spec, double p, double pi1, double mu);

struct Inversion {
  double p = 0.5;
  /// The mixture is flat (pi1 = 0 or h constant); p is the 0.5 cap.
  bool degenerate = false;
};

/// Solves pi1 h(p; mu) + 1 - pi1 = target for p, clamped to [kPMin, 0.5].
/// Throws ConfigError when the mixture is increasing in p.
Inversion invert_mixture_density(const ExponentialFamilySpec& spec, double target, double pi1,
                                 double mu);

/// Same contract, by bisection on [kPMin, 0.5] to absolute tolerance `tol`.
Inversion invert_mixture_density_bisection(const ExponentialFamilySpec& spec, double target,
                                           double pi1, double mu, double tol = 1e-12);

/// Phi^{-1}(1 - p), accurate in both tails.
double upper_normal_quantile(double p);
/// 1 - Phi(z).
double upper_normal_tail(double z);

}  // namespace adapt
