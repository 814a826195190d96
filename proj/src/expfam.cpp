#include "adapt/expfam.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/special_functions/erf.hpp>

#include "adapt/core.hpp"

namespace adapt {

namespace {
constexpr double kBetaMuFloor = 1.0 + 1e-6;
constexpr double kGaussianMuFloor = 1e-6;
}  // namespace

Family parse_family(std::string_view name) {
  if (name == "beta" || name == "beta_mixture") return Family::beta_mixture;
  if (name == "gaussian" || name == "gaussian_mixture") return Family::gaussian_mixture;
  throw ConfigError("unknown family '" + std::string(name) + "'");
}

std::string_view family_name(Family f) {
  return f == Family::beta_mixture ? "beta_mixture" : "gaussian_mixture";
}

double upper_normal_quantile(double p) {
  return std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

double upper_normal_tail(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

double ExponentialFamilySpec::g(double p) const {
  if (family_ == Family::gaussian_mixture) {
    if (p >= 1.0) return -std::numeric_limits<double>::infinity();
    if (p <= 0.0) return std::numeric_limits<double>::infinity();
  }
  return family_ == Family::beta_mixture ? -std::log(p) : upper_normal_quantile(p);
}

double ExponentialFamilySpec::eta(double mu) const {
  return family_ == Family::beta_mixture ? 1.0 - 1.0 / mu : mu;
}

double ExponentialFamilySpec::log_partition(double mu) const {
  return family_ == Family::beta_mixture ? std::log(mu) : 0.5 * mu * mu;
}

double ExponentialFamilySpec::mu_floor() const {
  return family_ == Family::beta_mixture ? kBetaMuFloor : kGaussianMuFloor;
}

double ExponentialFamilySpec::clamp_mu(double mu) const {
  if (std::isnan(mu)) return mu_floor();
  return std::max(mu, mu_floor());
}

bool ExponentialFamilySpec::admissible(double mu) const {
  if (!std::isfinite(mu)) return false;
  return family_ == Family::gaussian_mixture || mu > 0.0;
}

double ExponentialFamilySpec::log_density(double p, double mu) const {
  if (!admissible(mu)) {
    throw ConfigError("mean parameter " + std::to_string(mu) + " outside the " +
                      std::string(name()) + " domain");
  }
  const double e = eta(mu);
  // eta = 0 makes h uniform; avoid 0 * inf at the endpoints.
  if (e == 0.0) return -log_partition(mu);
  return e * g(p) - log_partition(mu);
}

double ExponentialFamilySpec::density(double p, double mu) const {
  return std::exp(log_density(p, mu));
}

double mixture_density(const ExponentialFamilySpec& spec, double p, double pi1, double mu) {
  return pi1 * spec.density(p, mu) + 1.0 - pi1;
}

namespace {

// Classifies the mixture shape; returns true when it is flat.
bool check_monotone(const ExponentialFamilySpec& spec, double pi1, double mu) {
  if (!spec.admissible(mu)) {
    throw ConfigError("mean parameter outside the family domain");
  }
  if (pi1 <= 0.0) return true;
  const double boundary = spec.family() == Family::beta_mixture ? 1.0 : 0.0;
  if (mu == boundary) return true;
  if (mu < boundary) {
    throw ConfigError("mixture density is increasing in p for mu = " + std::to_string(mu));
  }
  return false;
}

}  // namespace

Inversion invert_mixture_density(const ExponentialFamilySpec& spec, double target, double pi1,
                                 double mu) {
  if (check_monotone(spec, pi1, mu)) return Inversion{0.5, true};
  if (target <= mixture_density(spec, 0.5, pi1, mu)) return Inversion{0.5, false};
  if (target >= mixture_density(spec, kPMin, pi1, mu)) return Inversion{kPMin, false};

  // h(p; mu) = level, solved in closed form.
  const double level = (target - 1.0 + pi1) / pi1;
  double p;
  if (spec.family() == Family::beta_mixture) {
    // (1/mu) p^{1/mu - 1} = level
    p = std::exp(std::log(mu * level) / (1.0 / mu - 1.0));
  } else {
    // exp(mu z - mu^2/2) = level,  z = Phi^{-1}(1 - p)
    const double z = (std::log(level) + 0.5 * mu * mu) / mu;
    p = upper_normal_tail(z);
  }
  return Inversion{std::clamp(p, kPMin, 0.5), false};
}

Inversion invert_mixture_density_bisection(const ExponentialFamilySpec& spec, double target,
                                           double pi1, double mu, double tol) {
  if (check_monotone(spec, pi1, mu)) return Inversion{0.5, true};
  double lo = kPMin;
  double hi = 0.5;
  if (target <= mixture_density(spec, hi, pi1, mu)) return Inversion{hi, false};
  if (target >= mixture_density(spec, lo, pi1, mu)) return Inversion{lo, false};
  // f(lo) > target > f(hi), f decreasing.
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (mixture_density(spec, mid, pi1, mu) > target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return Inversion{0.5 * (lo + hi), false};
}

}  // namespace adapt
