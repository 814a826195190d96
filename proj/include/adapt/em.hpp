#pragma once

// EM estimation of the covariate-dependent two-groups model
//   H_i ~ Bernoulli(pi1(x_i)),  logit pi1 = theta' phi_pi(x_i)
//   p_i | H_i = 1 ~ h(p; mu_i),  zeta(mu_i) = beta' phi_mu(x_i)
// from partially masked p-values. Masked entries only contribute through
// the unordered pair {p', 1 - p'}.

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "adapt/core.hpp"
#include "adapt/expfam.hpp"
#include "adapt/glm.hpp"
#include "adapt/spline.hpp"

namespace adapt {

inline constexpr double kPiEpsilon = 1e-6;

struct FeaturizationPair {
  Featurization pi;
  Featurization mu;

  std::string label() const { return pi.label() + "|" + mu.label(); }
  static FeaturizationPair parse(std::string_view text);
  friend bool operator==(const FeaturizationPair&, const FeaturizationPair&) = default;
};

/// Design matrices for both sub-models, built once from the (public) covariates.
struct ModelDesign {
  FeaturizationPair features;
  Eigen::MatrixXd x_pi;
  Eigen::MatrixXd x_mu;

  static ModelDesign build(const FeaturizationPair& features, const RowMatrix& covariates);
  ModelDesign rows(const std::vector<Eigen::Index>& idx) const;
  std::size_t size() const { return static_cast<std::size_t>(x_pi.rows()); }
};

enum class Penalty { none, lasso };

struct FitterConfig {
  /// Weight the mu-model by H-hat (the literal M-step); default is unweighted.
  bool weighted_mu = false;
  /// Link for the mu-model; defaults to inverse (beta) or identity (gaussian).
  std::optional<Link> mu_link;
  Penalty penalty = Penalty::none;
  LassoOptions lasso{};
  /// Choose the penalty by cross-validation in the first fit only and reuse it
  /// (warm-started) in later refits.
  bool lasso_cv_once = true;
  IrlsOptions irls{};

  GlmSpec mu_spec(const ExponentialFamilySpec& family) const;
};

struct EmSettings {
  int iterations = 10;
  double tolerance = 1e-6;
};

struct TwoGroupsFit {
  std::vector<double> pi1;
  std::vector<double> mu;
  Eigen::VectorXd theta;
  Eigen::VectorXd beta;
  ExponentialFamilySpec family;
  GlmSpec mu_spec;
  double expected_loglik = 0.0;
  /// Number of fitted means moved up to the family's monotone floor.
  std::size_t mu_clamped = 0;
  std::optional<double> lambda_pi;
  std::optional<double> lambda_mu;

  std::size_t size() const { return pi1.size(); }
  /// Parameters at new design rows (clamped like the fitted values).
  void predict(const Eigen::MatrixXd& x_pi, const Eigen::MatrixXd& x_mu, std::vector<double>& pi1_out,
               std::vector<double>& mu_out) const;
};

struct EStep {
  Eigen::VectorXd H;
  Eigen::VectorXd y;
};

/// Posterior non-null probability and conditional sufficient statistic per hypothesis.
EStep e_step(const TwoGroupsFit& fit, const MaskState& mask);

/// E-step for a single hypothesis. `value` is p for revealed entries and p' otherwise.
void e_step_one(const ExponentialFamilySpec& family, double pi, double mu, double value,
                bool masked, double& H, double& y);

/// With a lasso fitter the penalty is re-chosen by cross-validation unless
/// `reuse_lambda` is set and `warm` carries one.
TwoGroupsFit m_step(const EStep& e, const ModelDesign& design, const ExponentialFamilySpec& family,
                    const FitterConfig& fitter, const TwoGroupsFit* warm = nullptr,
                    bool reuse_lambda = false);

TwoGroupsFit initialize(const MaskState& mask, const ModelDesign& design,
                        const ExponentialFamilySpec& family, const FitterConfig& fitter);

/// The initialization response 1 - J_i / (1 - 2 s_i), J_i = [masked].
std::vector<double> initialization_response(const MaskState& mask);

/// E-step expectation of the complete-data log-likelihood at the fit itself.
double expected_loglik(const TwoGroupsFit& fit, const MaskState& mask);
/// Same quantity for arbitrary per-hypothesis parameters (held-out scoring).
double expected_loglik(const ExponentialFamilySpec& family, const std::vector<double>& pi1,
                       const std::vector<double>& mu, const MaskState& mask);
/// M-step objective: complete-data log-likelihood at (pi1, mu) with the
/// hidden quantities replaced by the E-step expectations `e`.
double complete_loglik(const ExponentialFamilySpec& family, const std::vector<double>& pi1,
                       const std::vector<double>& mu, const EStep& e);
/// Log-likelihood of the masked data (up to a constant).
double observed_loglik(const TwoGroupsFit& fit, const MaskState& mask);

struct EmResult {
  TwoGroupsFit fit;
  std::vector<double> expected_loglik_trace;
  std::vector<double> observed_loglik_trace;
  /// M-step objective Q(. | previous) at the previous and at the updated parameters.
  std::vector<double> objective_before;
  std::vector<double> objective_after;
  int iterations = 0;
  bool converged = false;
};

class EmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Alternates E- and M-steps from `start` (or initialize()) for up to
/// settings.iterations rounds, stopping early when the relative change in the
/// expected log-likelihood falls below settings.tolerance.
EmResult run_em(const MaskState& mask, const ModelDesign& design,
                const ExponentialFamilySpec& family, const EmSettings& settings,
                const FitterConfig& fitter, const TwoGroupsFit* start = nullptr);

/// Rows of a mask for fitting on a subset. A and R are not carried over since
/// the split of masked entries between them is not part of the visible state.
MaskState subset_mask(const MaskState& mask, const std::vector<Eigen::Index>& rows);

}  // namespace adapt
