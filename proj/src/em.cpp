#include "adapt/em.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace adapt {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double clamp_pi(double pi) { return std::clamp(pi, kPiEpsilon, 1.0 - kPiEpsilon); }

double logit(double pi) { return std::log(pi) - std::log1p(-pi); }

double log_add(double a, double b) {
  const double hi = std::max(a, b);
  if (hi == -std::numeric_limits<double>::infinity()) return hi;
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

// log cosh(x) without overflow.
double log_cosh(double x) {
  const double a = std::abs(x);
  return a + std::log1p(std::exp(-2.0 * a)) - std::numbers::ln2;
}

// log[h(v) + h(1 - v)] for the masked pair.
double log_pair_density(const ExponentialFamilySpec& family, double v, double mu) {
  if (family.family() == Family::beta_mixture) {
    const double a = 1.0 / mu - 1.0;
    return -std::log(mu) + log_add(a * std::log(v), a * std::log1p(-v));
  }
  const double z = upper_normal_quantile(v);
  return log_cosh(mu * z) + std::numbers::ln2 - 0.5 * mu * mu;
}

Eigen::VectorXd column_or_empty(const Eigen::VectorXd& v, Eigen::Index cols) {
  return v.size() == cols ? v : Eigen::VectorXd();
}

GlmFit fit_component(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                     const GlmSpec& spec, const FitterConfig& fitter, const Eigen::VectorXd& warm,
                     std::optional<double> lambda) {
  const Eigen::VectorXd start = column_or_empty(warm, x.cols());
  const Eigen::VectorXd* sp = start.size() ? &start : nullptr;
  if (fitter.penalty == Penalty::lasso && x.cols() > 1) {
    if (lambda) return fit_l1_glm_fixed(x, y, w, spec, *lambda, fitter.lasso, sp);
    return fit_l1_glm(x, y, w, spec, fitter.lasso);
  }
  return fit_weighted_glm(x, y, w, spec, fitter.irls, sp);
}

void fill_parameters(TwoGroupsFit& fit, const Eigen::MatrixXd& x_pi, const Eigen::MatrixXd& x_mu,
                     std::vector<double>& pi1, std::vector<double>& mu, std::size_t* clamped) {
  const Eigen::VectorXd eta_pi = x_pi * fit.theta;
  const Eigen::VectorXd eta_mu = x_mu * fit.beta;
  pi1.resize(static_cast<std::size_t>(eta_pi.size()));
  mu.resize(pi1.size());
  std::size_t moved = 0;
  for (std::size_t i = 0; i < pi1.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    pi1[i] = clamp_pi(sigmoid(eta_pi(r)));
    const double raw = fit.mu_spec.inverse_link(eta_mu(r));
    mu[i] = fit.family.clamp_mu(raw);
    if (!(raw >= mu[i])) ++moved;
  }
  if (clamped) *clamped = moved;
}

}  // namespace

FeaturizationPair FeaturizationPair::parse(std::string_view text) {
  const auto bar = text.find('|');
  if (bar == std::string_view::npos) {
    const Featurization f = Featurization::parse(text);
    return {f, f};
  }
  return {Featurization::parse(text.substr(0, bar)), Featurization::parse(text.substr(bar + 1))};
}

ModelDesign ModelDesign::build(const FeaturizationPair& features, const RowMatrix& covariates) {
  ModelDesign d;
  d.features = features;
  d.x_pi = FeatureMap(features.pi, covariates).transform(covariates);
  d.x_mu = features.mu == features.pi ? d.x_pi
                                      : FeatureMap(features.mu, covariates).transform(covariates);
  return d;
}

ModelDesign ModelDesign::rows(const std::vector<Eigen::Index>& idx) const {
  ModelDesign d;
  d.features = features;
  d.x_pi = x_pi(idx, Eigen::all);
  d.x_mu = x_mu(idx, Eigen::all);
  return d;
}

GlmSpec FitterConfig::mu_spec(const ExponentialFamilySpec& family) const {
  if (family.family() == Family::beta_mixture) return GlmSpec::gamma(mu_link.value_or(Link::inverse));
  return {GlmFamily::gaussian, mu_link.value_or(Link::identity)};
}

void TwoGroupsFit::predict(const Eigen::MatrixXd& x_pi, const Eigen::MatrixXd& x_mu,
                           std::vector<double>& pi1_out, std::vector<double>& mu_out) const {
  TwoGroupsFit copy = *this;
  fill_parameters(copy, x_pi, x_mu, pi1_out, mu_out, nullptr);
}

void e_step_one(const ExponentialFamilySpec& family, double pi, double mu, double value, bool masked,
                double& H, double& y) {
  const double lo = logit(pi);
  if (!masked) {
    H = sigmoid(lo + family.log_density(value, mu));
    y = family.g(value);
    return;
  }
  if (family.family() == Family::beta_mixture) {
    const double a = 1.0 / mu - 1.0;
    const double l1 = a * std::log(value);
    const double l2 = a * std::log1p(-value);
    H = sigmoid(lo + log_pair_density(family, value, mu) - std::numbers::ln2);
    const double w1 = sigmoid(l1 - l2);
    y = w1 * -std::log(value) + (1.0 - w1) * -std::log1p(-value);
    return;
  }
  const double z = upper_normal_quantile(value);
  H = sigmoid(lo + log_cosh(mu * z) - 0.5 * mu * mu);
  y = std::abs(z) * std::tanh(mu * std::abs(z));
}

EStep e_step(const TwoGroupsFit& fit, const MaskState& mask) {
  const auto n = static_cast<Eigen::Index>(mask.size());
  EStep e{Eigen::VectorXd(n), Eigen::VectorXd(n)};
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto i = static_cast<std::size_t>(r);
    e_step_one(fit.family, fit.pi1[i], fit.mu[i], mask.visible[i], !mask.is_revealed(i), e.H(r),
               e.y(r));
  }
  return e;
}

TwoGroupsFit m_step(const EStep& e, const ModelDesign& design, const ExponentialFamilySpec& family,
                    const FitterConfig& fitter, const TwoGroupsFit* warm, bool reuse_lambda) {
  TwoGroupsFit fit;
  fit.family = family;
  fit.mu_spec = fitter.mu_spec(family);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(e.H.size());
  const Eigen::VectorXd none;

  const GlmFit pi_fit =
      fit_component(design.x_pi, e.H, ones, GlmSpec::quasi_binomial(), fitter,
                    warm ? warm->theta : none, reuse_lambda && warm ? warm->lambda_pi : std::nullopt);
  const GlmFit mu_fit =
      fit_component(design.x_mu, e.y, fitter.weighted_mu ? e.H : ones, fit.mu_spec, fitter,
                    warm ? warm->beta : none, reuse_lambda && warm ? warm->lambda_mu : std::nullopt);
  fit.theta = pi_fit.coefficients;
  fit.beta = mu_fit.coefficients;
  fit.lambda_pi = pi_fit.lambda;
  fit.lambda_mu = mu_fit.lambda;
  fill_parameters(fit, design.x_pi, design.x_mu, fit.pi1, fit.mu, &fit.mu_clamped);
  return fit;
}

std::vector<double> initialization_response(const MaskState& mask) {
  std::vector<double> out(mask.size(), 1.0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask.is_revealed(i)) continue;
    const double denom = 1.0 - 2.0 * mask.surface[i];
    out[i] = denom > 0.0 ? std::clamp(1.0 - 1.0 / denom, 0.0, 1.0) : 0.0;
  }
  return out;
}

TwoGroupsFit initialize(const MaskState& mask, const ModelDesign& design,
                        const ExponentialFamilySpec& family, const FitterConfig& fitter) {
  const std::vector<double> jt = initialization_response(mask);
  EStep e{Eigen::Map<const Eigen::VectorXd>(jt.data(), static_cast<Eigen::Index>(jt.size())),
          Eigen::VectorXd(static_cast<Eigen::Index>(mask.size()))};
  for (std::size_t i = 0; i < mask.size(); ++i) {
    e.y(static_cast<Eigen::Index>(i)) = family.g(mask.visible[i]);
  }
  FitterConfig unweighted = fitter;
  unweighted.weighted_mu = false;
  TwoGroupsFit fit = m_step(e, design, family, unweighted);
  fit.expected_loglik = expected_loglik(fit, mask);
  return fit;
}

double expected_loglik(const ExponentialFamilySpec& family, const std::vector<double>& pi1,
                       const std::vector<double>& mu, const MaskState& mask) {
  double total = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    double H = 0.0;
    double y = 0.0;
    e_step_one(family, pi1[i], mu[i], mask.visible[i], !mask.is_revealed(i), H, y);
    total += H * std::log(pi1[i]) + (1.0 - H) * std::log1p(-pi1[i]) +
             H * (y * family.eta(mu[i]) - family.log_partition(mu[i]));
  }
  return total;
}

double complete_loglik(const ExponentialFamilySpec& family, const std::vector<double>& pi1,
                       const std::vector<double>& mu, const EStep& e) {
  double total = 0.0;
  for (std::size_t i = 0; i < pi1.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const double H = e.H(r);
    total += H * std::log(pi1[i]) + (1.0 - H) * std::log1p(-pi1[i]) +
             H * (e.y(r) * family.eta(mu[i]) - family.log_partition(mu[i]));
  }
  return total;
}

double expected_loglik(const TwoGroupsFit& fit, const MaskState& mask) {
  return expected_loglik(fit.family, fit.pi1, fit.mu, mask);
}

double observed_loglik(const TwoGroupsFit& fit, const MaskState& mask) {
  double total = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double lp = std::log(fit.pi1[i]);
    const double lq = std::log1p(-fit.pi1[i]);
    const double v = mask.visible[i];
    if (mask.is_revealed(i)) {
      total += log_add(lp + fit.family.log_density(v, fit.mu[i]), lq);
    } else {
      total += log_add(lp + log_pair_density(fit.family, v, fit.mu[i]), lq + std::numbers::ln2);
    }
  }
  return total;
}

EmResult run_em(const MaskState& mask, const ModelDesign& design,
                const ExponentialFamilySpec& family, const EmSettings& settings,
                const FitterConfig& fitter, const TwoGroupsFit* start) {
  if (settings.iterations < 1) throw ConfigError("EM needs at least one iteration");
  if (design.size() != mask.size()) throw ConfigError("design and mask sizes differ");
  EmResult out;
  out.fit = start ? *start : initialize(mask, design, family, fitter);
  if (out.fit.family != family) out.fit = initialize(mask, design, family, fitter);
  double previous = expected_loglik(out.fit, mask);
  for (int r = 0; r < settings.iterations; ++r) {
    const EStep e = e_step(out.fit, mask);
    TwoGroupsFit next = m_step(e, design, family, fitter, &out.fit, r > 0 || (start && fitter.lasso_cv_once));
    out.objective_before.push_back(complete_loglik(family, out.fit.pi1, out.fit.mu, e));
    out.objective_after.push_back(complete_loglik(family, next.pi1, next.mu, e));
    const double ell = expected_loglik(next, mask);
    const double obs = observed_loglik(next, mask);
    if (!std::isfinite(ell) || !std::isfinite(obs)) {
      throw EmError("EM produced a non-finite log-likelihood at iteration " + std::to_string(r + 1));
    }
    next.expected_loglik = ell;
    out.fit = std::move(next);
    out.expected_loglik_trace.push_back(ell);
    out.observed_loglik_trace.push_back(obs);
    out.iterations = r + 1;
    const double change = std::abs(ell - previous) / std::max(std::abs(previous), 1e-12);
    previous = ell;
    if (change < settings.tolerance) {
      out.converged = true;
      break;
    }
  }
  return out;
}

MaskState subset_mask(const MaskState& mask, const std::vector<Eigen::Index>& rows) {
  MaskState out;
  std::vector<double> s;
  s.reserve(rows.size());
  for (Eigen::Index r : rows) {
    const auto i = static_cast<std::size_t>(r);
    s.push_back(mask.surface[i]);
    out.revealed.push_back(mask.revealed[i]);
    out.pprime.push_back(mask.pprime[i]);
    out.visible.push_back(mask.visible[i]);
  }
  out.surface = ThresholdSurface(std::move(s));
  return out;
}

}  // namespace adapt
