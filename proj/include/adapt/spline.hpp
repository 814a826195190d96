#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "adapt/core.hpp"

namespace adapt {

/// Natural cubic spline basis for one covariate with knots at equi-quantiles of
/// the training values. `knots` counts basis functions excluding the intercept,
/// so the basis has knots + 1 knot locations (both boundaries included).
class NaturalSplineBasis {
 public:
  NaturalSplineBasis(std::span<const double> training, std::size_t knots);

  std::size_t columns() const { return knots_.size() - 1; }
  const std::vector<double>& knot_locations() const { return knots_; }

  /// Writes columns() values for covariate value x (no intercept).
  void evaluate(double x, std::span<double> out) const;

 private:
  std::vector<double> knots_;
  double lo_ = 0.0;
  double scale_ = 1.0;
};

/// Design matrix with an intercept column followed by the natural spline basis.
Eigen::MatrixXd spline_basis(std::span<const double> covariate, std::size_t knots);

/// How covariates are mapped to GLM predictors.
///  - identity: every covariate column, linearly
///  - spline:   additive natural cubic splines, `knots` columns per covariate
///  - subset:   the listed covariate columns, linearly (empty list = intercept only)
struct Featurization {
  enum class Kind { identity, spline, subset };
  Kind kind = Kind::subset;
  std::size_t knots = 0;
  std::vector<std::size_t> indices;

  static Featurization intercept() { return {}; }
  static Featurization identity() { return {Kind::identity, 0, {}}; }
  static Featurization spline(std::size_t knots) { return {Kind::spline, knots, {}}; }
  static Featurization subset(std::vector<std::size_t> idx) {
    return {Kind::subset, 0, std::move(idx)};
  }

  /// Degrees of freedom including the intercept for covariates of dimension `dim`.
  std::size_t df(std::size_t dim) const;
  std::string label() const;
  /// Parses the format produced by label(): "intercept", "identity", "spline(6)",
  /// "subset(0,1)".
  static Featurization parse(std::string_view text);

  friend bool operator==(const Featurization&, const Featurization&) = default;
};

/// A featurization bound to training covariates: knot placement and column
/// standardization are frozen at construction so evaluation is deterministic.
class FeatureMap {
 public:
  FeatureMap(const Featurization& f, const RowMatrix& training);

  const Featurization& featurization() const { return f_; }
  std::size_t columns() const { return mean_.size() + 1; }
  Eigen::MatrixXd transform(const RowMatrix& x) const;

 private:
  Eigen::MatrixXd raw(const RowMatrix& x) const;

  Featurization f_;
  std::vector<std::size_t> columns_used_;
  std::vector<NaturalSplineBasis> splines_;
  std::vector<double> mean_;
  std::vector<double> scale_;
};

}  // namespace adapt
