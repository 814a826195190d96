#pragma once

// Local FDR under a fitted two-groups model and the reveal-one threshold update.

#include <cstdint>
#include <vector>

#include "adapt/em.hpp"

namespace adapt {

/// Subtracted from the largest masked lfdr to form the level c, so that only
/// the argmax (and exact ties) end up strictly above the level.
inline constexpr double kLevelOffset = 1e-15;

/// (pi1 h(1; mu) + 1 - pi1) / (pi1 h(p; mu) + 1 - pi1), clamped to (0, 1].
/// `clamped` is set when the raw ratio exceeded 1.
double local_fdr(const ExponentialFamilySpec& family, double p, double pi1, double mu,
                 bool* clamped = nullptr);
double local_fdr(const TwoGroupsFit& fit, double p, std::size_t i);

struct LfdrProfile {
  std::vector<double> lfdr;
  std::vector<std::uint8_t> masked;
  std::size_t clamped = 0;
};

/// lfdr of every hypothesis evaluated at its mirror value p'.
LfdrProfile lfdr_profile(const TwoGroupsFit& fit, const MaskState& mask);

/// s(x_i; c): the largest p <= 0.5 with lfdr(p | x_i) <= c.
double level_surface_point(const TwoGroupsFit& fit, std::size_t i, double c);

struct RevealUpdate {
  ThresholdSurface surface;
  /// Masked hypotheses that the new surface unmasks.
  std::vector<std::size_t> revealed;
  double level = 0.0;
  /// Surface points nudged so the surface decision agrees with lfdr ordering
  /// where the inversion and the lfdr comparison disagree in the last bits.
  std::size_t corrections = 0;
  LfdrProfile profile;
  bool terminal = false;
};

RevealUpdate reveal_one_update(const ThresholdSurface& s, const TwoGroupsFit& fit,
                               const MaskState& mask);

struct EquivalenceReport {
  std::size_t checked = 0;
  std::size_t mismatches = 0;
  /// Hypotheses with lfdr within `margin` of c, where floating point cannot
  /// decide the side and which are therefore not compared.
  std::size_t near_level = 0;
  bool holds() const { return mismatches == 0; }
};

/// For masked i: p'_i <= s(x_i; c)  <=>  lfdr(p'_i | x_i) <= c.
EquivalenceReport monotone_equivalence_check(const TwoGroupsFit& fit, const MaskState& mask,
                                             double c, double margin = 1e-12);

}  // namespace adapt
