#pragma once

// Weighted GLM fitting by IRLS, plus an L1-penalized variant with the
// penalty chosen by K-fold cross-validation.

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace adapt {

enum class GlmFamily { binomial, gamma, gaussian };
enum class Link { logit, inverse, log, identity };

struct GlmSpec {
  GlmFamily family = GlmFamily::gaussian;
  Link link = Link::identity;

  static GlmSpec quasi_binomial() { return {GlmFamily::binomial, Link::logit}; }
  static GlmSpec gamma(Link l = Link::inverse) { return {GlmFamily::gamma, l}; }
  static GlmSpec gaussian() { return {GlmFamily::gaussian, Link::identity}; }

  double link_fn(double mu) const;
  double inverse_link(double eta) const;
  /// d eta / d mu
  double link_derivative(double mu) const;
  double variance(double mu) const;
  bool valid_mean(double mu) const;
  /// Unit deviance for one observation (before weighting).
  double unit_deviance(double y, double mu) const;
};

Link parse_link(std::string_view name);
std::string_view link_name(Link link);

struct IrlsOptions {
  double tolerance = 1e-8;
  int max_iterations = 25;
  int max_halvings = 30;
};

struct GlmFit {
  Eigen::VectorXd coefficients;
  GlmSpec spec;
  Eigen::VectorXd fitted;
  Eigen::VectorXd linear_predictor;
  double deviance = 0.0;
  /// Deviance after every accepted iteration.
  std::vector<double> deviance_trace;
  bool converged = false;
  int iterations = 0;
  /// The weighted Gram matrix was singular and a 1e-8 * trace ridge was added.
  bool ridge_used = false;
  /// Penalty picked by cross-validation (L1 fits only).
  std::optional<double> lambda;

  Eigen::VectorXd predict(const Eigen::MatrixXd& design) const;
};

GlmFit fit_weighted_glm(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                        const Eigen::VectorXd& weights, const GlmSpec& spec,
                        const IrlsOptions& options = {},
                        const Eigen::VectorXd* start = nullptr);

struct LassoOptions {
  /// Empty grid: 20 log-spaced values from lambda_max down to 1e-3 lambda_max.
  std::vector<double> lambda_grid;
  std::size_t path_length = 20;
  double min_ratio = 1e-3;
  std::size_t cv_folds = 5;
  std::uint64_t seed = 0;
  IrlsOptions irls{};
  double cd_tolerance = 1e-9;
};

/// L1-penalized GLM. Column 0 of `design` is an unpenalized intercept; the
/// remaining columns are standardized internally. The penalized objective is
/// deviance / (2 sum w) + lambda * sum_{j>0} |beta_j| on the standardized scale.
GlmFit fit_l1_glm(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                  const Eigen::VectorXd& weights, const GlmSpec& spec,
                  const LassoOptions& options);

/// Fits a single penalty value, warm-started from `start` when given.
GlmFit fit_l1_glm_fixed(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                        const Eigen::VectorXd& weights, const GlmSpec& spec, double lambda,
                        const LassoOptions& options, const Eigen::VectorXd* start = nullptr);

}  // namespace adapt
