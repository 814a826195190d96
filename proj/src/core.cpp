#include "adapt/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace adapt {

namespace {

void fill_pvalues(std::span<const double> pvalues, std::vector<double>& mirror,
                  std::vector<std::uint8_t>& upper) {
  mirror.resize(pvalues.size());
  upper.resize(pvalues.size());
  for (std::size_t i = 0; i < pvalues.size(); ++i) {
    double p = pvalues[i];
    if (!std::isfinite(p) || p < 0.0 || p > 1.0) {
      throw DataError("p-value at row " + std::to_string(i) + " is outside [0, 1]");
    }
    p = std::clamp(p, kPMin, 1.0 - kPMin);
    upper[i] = p >= 0.5 ? 1 : 0;
    // 1 - p is exact for p >= 0.5.
    mirror[i] = upper[i] ? 1.0 - p : p;
  }
}

}  // namespace

HypothesisSet HypothesisSet::ingest(std::span<const double> pvalues,
                                    const std::vector<std::vector<double>>& covariates,
                                    std::optional<std::vector<bool>> truth) {
  if (covariates.size() != pvalues.size()) {
    throw DataError("covariate rows (" + std::to_string(covariates.size()) +
                    ") do not match p-values (" + std::to_string(pvalues.size()) + ")");
  }
  const std::size_t d = covariates.empty() ? 0 : covariates.front().size();
  RowMatrix x(static_cast<Eigen::Index>(covariates.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < covariates.size(); ++i) {
    if (covariates[i].size() != d) {
      throw DataError("covariate row " + std::to_string(i) + " has " +
                      std::to_string(covariates[i].size()) + " entries, expected " +
                      std::to_string(d));
    }
    for (std::size_t j = 0; j < d; ++j) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = covariates[i][j];
    }
  }
  return ingest(pvalues, std::move(x), std::move(truth));
}

HypothesisSet HypothesisSet::ingest(std::span<const double> pvalues, RowMatrix covariates,
                                    std::optional<std::vector<bool>> truth) {
  if (static_cast<std::size_t>(covariates.rows()) != pvalues.size()) {
    throw DataError("covariate rows (" + std::to_string(covariates.rows()) +
                    ") do not match p-values (" + std::to_string(pvalues.size()) + ")");
  }
  if (truth && truth->size() != pvalues.size()) {
    throw DataError("truth labels do not match p-values");
  }
  for (Eigen::Index i = 0; i < covariates.rows(); ++i) {
    for (Eigen::Index j = 0; j < covariates.cols(); ++j) {
      if (!std::isfinite(covariates(i, j))) {
        throw DataError("non-finite covariate at row " + std::to_string(i) + ", column " +
                        std::to_string(j));
      }
    }
  }
  HypothesisSet h;
  fill_pvalues(pvalues, h.mirror_, h.upper_);
  h.covariates_ = std::move(covariates);
  h.truth_ = std::move(truth);
  return h;
}

std::vector<double> HypothesisSet::pvalues() const {
  std::vector<double> out(size());
  for (std::size_t i = 0; i < size(); ++i) out[i] = pvalue(i);
  return out;
}

HypothesisSet HypothesisSet::with_reflected(std::span<const std::size_t> indices) const {
  HypothesisSet out = *this;
  for (std::size_t i : indices) {
    if (i >= size()) throw DataError("reflection index out of range");
    out.upper_[i] ^= 1;
  }
  return out;
}

ThresholdSurface::ThresholdSurface(std::vector<double> values) : values_(std::move(values)) {
  for (double v : values_) {
    if (!(v >= 0.0 && v <= 0.5)) {
      throw ConfigError("threshold values must lie in [0, 0.5]");
    }
  }
}

ThresholdSurface ThresholdSurface::constant(std::size_t n, double s) {
  return ThresholdSurface(std::vector<double>(n, s));
}

bool ThresholdSurface::dominates(const ThresholdSurface& other) const {
  if (other.size() != size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (other.values_[i] > values_[i]) return false;
  }
  return true;
}

ThresholdSurface ThresholdSurface::refined_to(const ThresholdSurface& next) const {
  if (next.size() != size()) throw ConfigError("threshold size mismatch");
  if (!dominates(next)) {
    throw ConfigError("threshold update must not increase the surface anywhere");
  }
  return next;
}

double compute_fdp_hat(std::size_t A, std::size_t R) {
  return (1.0 + static_cast<double>(A)) / static_cast<double>(std::max<std::size_t>(R, 1));
}

double MaskState::fdp_hat() const { return compute_fdp_hat(A, R); }

MaskState mask(const HypothesisSet& h, const ThresholdSurface& s) {
  const std::size_t n = h.size();
  if (s.size() != n) throw ConfigError("threshold size does not match hypothesis count");
  MaskState m;
  m.surface = s;
  m.revealed.assign(n, 0);
  m.pprime.resize(n);
  m.visible.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double mi = h.mirror(i);
    m.pprime[i] = mi;
    // p <= s  <=>  (b = 0, m <= s);  p >= 1 - s  <=>  (b = 1, m <= s).
    if (mi <= s[i]) {
      m.visible[i] = mi;
      if (h.upper(i)) {
        ++m.A;
      } else {
        ++m.R;
      }
    } else {
      m.revealed[i] = 1;
      m.visible[i] = h.pvalue(i);
    }
  }
  return m;
}

MirrorReport mirror_conservatism_score(const PValueSampler& sampler, std::size_t bins,
                                       std::size_t draws, std::uint64_t seed) {
  if (bins < 2) throw ConfigError("mirror_conservatism_score needs at least 2 bins");
  if (draws < 1000) throw ConfigError("mirror_conservatism_score needs at least 1000 draws");

  Rng rng(seed);
  std::vector<double> sample(draws);
  for (auto& v : sample) v = sampler(rng);

  std::vector<double> grid(bins + 1);
  for (std::size_t k = 0; k <= bins; ++k) {
    grid[k] = 0.5 * static_cast<double>(k) / static_cast<double>(bins);
  }

  MirrorReport best;
  best.max_violation = -std::numeric_limits<double>::infinity();
  const double nd = static_cast<double>(draws);
  for (std::size_t k1 = 0; k1 <= bins; ++k1) {
    for (std::size_t k2 = k1; k2 <= bins; ++k2) {
      const double a1 = grid[k1];
      const double a2 = grid[k2];
      const double lo = 1.0 - a2;
      const double hi = 1.0 - a1;
      // Per-draw difference d = 1[p in A1] - 1[p in A2]; its mean and SE.
      double sum = 0.0;
      double sumsq = 0.0;
      for (double p : sample) {
        const double d = static_cast<double>(p >= a1 && p <= a2) -
                         static_cast<double>(p >= lo && p <= hi);
        sum += d;
        sumsq += d * d;
      }
      const double mean = sum / nd;
      const double var = std::max(0.0, sumsq / nd - mean * mean);
      const double se = std::sqrt(var / nd);
      if (mean > best.max_violation) {
        best = MirrorReport{mean, se, a1, a2};
      }
    }
  }
  return best;
}

}  // namespace adapt
