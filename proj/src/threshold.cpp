#include "adapt/threshold.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace adapt {

double local_fdr(const ExponentialFamilySpec& family, double p, double pi1, double mu, bool* clamped) {
  const double numerator = mixture_density(family, 1.0, pi1, mu);
  const double denominator = mixture_density(family, p, pi1, mu);
  double r = numerator / denominator;
  if (clamped) *clamped = r > 1.0;
  if (!(r <= 1.0)) r = 1.0;
  return std::max(r, std::numeric_limits<double>::min());
}

double local_fdr(const TwoGroupsFit& fit, double p, std::size_t i) {
  return local_fdr(fit.family, p, fit.pi1[i], fit.mu[i]);
}

LfdrProfile lfdr_profile(const TwoGroupsFit& fit, const MaskState& mask) {
  LfdrProfile out;
  out.lfdr.resize(mask.size());
  out.masked.resize(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    bool clamped = false;
    out.lfdr[i] = local_fdr(fit.family, mask.pprime[i], fit.pi1[i], fit.mu[i], &clamped);
    out.masked[i] = mask.is_revealed(i) ? 0 : 1;
    if (clamped) ++out.clamped;
  }
  return out;
}

double level_surface_point(const TwoGroupsFit& fit, std::size_t i, double c) {
  if (c >= 1.0) return 0.5;
  const double target = mixture_density(fit.family, 1.0, fit.pi1[i], fit.mu[i]) / c;
  return invert_mixture_density(fit.family, target, fit.pi1[i], fit.mu[i]).p;
}

RevealUpdate reveal_one_update(const ThresholdSurface& s, const TwoGroupsFit& fit,
                               const MaskState& mask) {
  RevealUpdate out;
  out.profile = lfdr_profile(fit, mask);
  const auto& lfdr = out.profile.lfdr;
  double top = -1.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (out.profile.masked[i]) top = std::max(top, lfdr[i]);
  }
  if (top < 0.0) {
    out.terminal = true;
    out.surface = s;
    return out;
  }
  const double c = top - kLevelOffset;
  out.level = c;
  std::vector<double> next(s.values());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    next[i] = std::min(next[i], level_surface_point(fit, i, c));
    if (!out.profile.masked[i]) continue;
    const double pp = mask.pprime[i];
    if (lfdr[i] > c) {
      if (next[i] >= pp) {
        next[i] = std::nextafter(pp, 0.0);
        ++out.corrections;
      }
      out.revealed.push_back(i);
    } else if (next[i] < pp) {
      next[i] = pp;
      ++out.corrections;
    }
  }
  out.surface = s.refined_to(ThresholdSurface(std::move(next)));
  return out;
}

EquivalenceReport monotone_equivalence_check(const TwoGroupsFit& fit, const MaskState& mask,
                                             double c, double margin) {
  EquivalenceReport out;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask.is_revealed(i)) continue;
    const double l = local_fdr(fit, mask.pprime[i], i);
    if (std::abs(l - c) <= margin) {
      ++out.near_level;
      continue;
    }
    ++out.checked;
    const bool below_surface = mask.pprime[i] <= level_surface_point(fit, i, c);
    if (below_surface != (l <= c)) ++out.mismatches;
  }
  return out;
}

}  // namespace adapt
