#pragma once

// Domain types shared by every stage of the protocol: hypotheses, threshold
// surfaces, and the masked view an analyst is allowed to see.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace adapt {

inline constexpr double kPMin = 1e-15;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Rng = std::mt19937_64;

/// Bad input data (malformed values, mismatched lengths). Maps to exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or usage. Maps to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Covariate/p-value records.
///
/// Each p-value is held as its mirror distance m = min(p, 1 - p) and a side bit
/// b = [p >= 0.5]. Reflecting p to 1 - p flips b and leaves m untouched, so the
/// masked view (which only ever reads m) is exactly reflection invariant.
class HypothesisSet {
 public:
  HypothesisSet() = default;

  /// Validates and clamps raw input. `covariates` holds one row per p-value.
  static HypothesisSet ingest(std::span<const double> pvalues,
                              const std::vector<std::vector<double>>& covariates,
                              std::optional<std::vector<bool>> truth = std::nullopt);
  static HypothesisSet ingest(std::span<const double> pvalues, RowMatrix covariates,
                              std::optional<std::vector<bool>> truth = std::nullopt);

  std::size_t size() const { return mirror_.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(covariates_.cols()); }

  double pvalue(std::size_t i) const { return upper_[i] ? 1.0 - mirror_[i] : mirror_[i]; }
  double mirror(std::size_t i) const { return mirror_[i]; }
  bool upper(std::size_t i) const { return upper_[i] != 0; }
  std::vector<double> pvalues() const;

  const RowMatrix& covariates() const { return covariates_; }
  const std::optional<std::vector<bool>>& truth() const { return truth_; }

  /// Copy with p_i replaced by 1 - p_i for each listed index.
  HypothesisSet with_reflected(std::span<const std::size_t> indices) const;

 private:
  std::vector<double> mirror_;
  std::vector<std::uint8_t> upper_;
  RowMatrix covariates_;
  std::optional<std::vector<bool>> truth_;
};

/// Rejection threshold evaluated at the observed covariates, s_i = s(x_i).
class ThresholdSurface {
 public:
  ThresholdSurface() = default;
  explicit ThresholdSurface(std::vector<double> values);
  static ThresholdSurface constant(std::size_t n, double s);

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  const std::vector<double>& values() const { return values_; }

  /// Returns `next` if it is pointwise no larger than this surface; throws otherwise.
  ThresholdSurface refined_to(const ThresholdSurface& next) const;
  bool dominates(const ThresholdSurface& other) const;

 private:
  std::vector<double> values_;
};

/// The analyst-visible state induced by a surface: which p-values are revealed,
/// the mirror values of everything, and the counts A and R.
struct MaskState {
  ThresholdSurface surface;
  std::vector<std::uint8_t> revealed;
  std::vector<double> pprime;
  /// p_i for revealed entries, p'_i for masked ones.
  std::vector<double> visible;
  std::size_t A = 0;
  std::size_t R = 0;

  std::size_t size() const { return pprime.size(); }
  bool is_revealed(std::size_t i) const { return revealed[i] != 0; }
  std::size_t masked_count() const { return A + R; }
  double fdp_hat() const;
};

MaskState mask(const HypothesisSet& h, const ThresholdSurface& s);

double compute_fdp_hat(std::size_t A, std::size_t R);

using PValueSampler = std::function<double(Rng&)>;

struct MirrorReport {
  double max_violation = 0.0;
  double standard_error = 0.0;
  double a1 = 0.0;
  double a2 = 0.0;
  bool passes(double z = 3.0) const { return max_violation <= z * standard_error; }
};

/// Monte Carlo estimate of max over grid intervals [a1, a2] in [0, 0.5] of
/// P(p in [a1, a2]) - P(p in [1 - a2, 1 - a1]).
MirrorReport mirror_conservatism_score(const PValueSampler& sampler, std::size_t bins,
                                       std::size_t draws, std::uint64_t seed);

}  // namespace adapt
