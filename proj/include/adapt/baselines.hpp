#pragma once

// Reference multiple-testing procedures.

#include <span>
#include <string>
#include <vector>

namespace adapt {

struct BaselineResult {
  std::string method;
  std::vector<std::size_t> rejections;
  /// Realized p-value cutoff (BH, Storey) or constant threshold s (Barber-Candes).
  double threshold = 0.0;
};

BaselineResult bh(std::span<const double> pvalues, double alpha);

/// pi0 = (1 + #{p > lambda}) / (n (1 - lambda)), capped at 1; BH at alpha / pi0.
double storey_pi0(std::span<const double> pvalues, double lambda = 0.5);
BaselineResult storey_bh(std::span<const double> pvalues, double alpha, double lambda = 0.5);

/// Largest s in {min(p, 1 - p)} (capped at s_max) with
/// (1 + #{p >= 1 - s}) / max(#{p <= s}, 1) <= alpha; rejects {p <= s}.
/// p = 0.5 counts on the large side only.
BaselineResult barber_candes(std::span<const double> pvalues, double alpha, double s_max = 0.5);

}  // namespace adapt
