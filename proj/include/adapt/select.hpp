#pragma once

// Choosing a featurization pair by BIC or by held-out expected log-likelihood.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adapt/em.hpp"

namespace adapt {

struct SelectionCriterion {
  enum class Kind { bic, cv };
  Kind kind = Kind::bic;
  std::size_t folds = 5;

  static SelectionCriterion bic() { return {}; }
  static SelectionCriterion cv(std::size_t k = 5) { return {Kind::cv, k}; }
  std::string label() const;
  static SelectionCriterion parse(std::string_view text);
};

struct CandidateScore {
  std::string label;
  std::size_t df_pi = 0;
  std::size_t df_mu = 0;
  double loglik = 0.0;
  /// BIC (lower is better) or summed held-out expected log-likelihood (higher is better).
  double score = 0.0;
  bool failed = false;
  std::string error;
};

struct SelectionResult {
  std::size_t chosen = 0;
  std::vector<CandidateScore> table;
  /// Every candidate failed and the intercept-only model was used instead.
  bool fallback = false;
  FeaturizationPair features;
  ModelDesign design;
  EmResult em;
};

SelectionResult select_featurization(const std::vector<FeaturizationPair>& candidates,
                                     const MaskState& mask, const RowMatrix& covariates,
                                     const ExponentialFamilySpec& family,
                                     const EmSettings& settings, const FitterConfig& fitter,
                                     const SelectionCriterion& criterion, std::uint64_t seed);

}  // namespace adapt
