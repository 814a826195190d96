#include "adapt/select.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace adapt {

std::string SelectionCriterion::label() const {
  return kind == Kind::bic ? "bic" : "cv(" + std::to_string(folds) + ")";
}

SelectionCriterion SelectionCriterion::parse(std::string_view text) {
  if (text == "bic") return bic();
  if (text == "cv") return cv();
  if (text.starts_with("cv(") && text.ends_with(")")) {
    try {
      const auto k = std::stoul(std::string(text.substr(3, text.size() - 4)));
      if (k >= 2) return cv(k);
    } catch (const std::exception&) {
    }
  }
  throw ConfigError("unknown selection criterion '" + std::string(text) + "'");
}

namespace {

double held_out_score(const FeaturizationPair& pair, const ModelDesign& design, const MaskState& mask,
                      const ExponentialFamilySpec& family, const EmSettings& settings,
                      const FitterConfig& fitter, std::size_t folds, std::uint64_t seed) {
  const auto n = static_cast<Eigen::Index>(mask.size());
  if (static_cast<std::size_t>(n) < folds) throw DataError("fewer hypotheses than CV folds");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  (void)pair;
  double total = 0.0;
  for (std::size_t k = 0; k < folds; ++k) {
    std::vector<Eigen::Index> train;
    std::vector<Eigen::Index> test;
    for (std::size_t j = 0; j < order.size(); ++j) (j % folds == k ? test : train).push_back(order[j]);
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    const EmResult em =
        run_em(subset_mask(mask, train), design.rows(train), family, settings, fitter);
    const ModelDesign held = design.rows(test);
    std::vector<double> pi1;
    std::vector<double> mu;
    em.fit.predict(held.x_pi, held.x_mu, pi1, mu);
    total += expected_loglik(family, pi1, mu, subset_mask(mask, test));
  }
  return total;
}

}  // namespace

SelectionResult select_featurization(const std::vector<FeaturizationPair>& candidates,
                                     const MaskState& mask, const RowMatrix& covariates,
                                     const ExponentialFamilySpec& family,
                                     const EmSettings& settings, const FitterConfig& fitter,
                                     const SelectionCriterion& criterion, std::uint64_t seed) {
  if (candidates.empty()) throw ConfigError("no candidate featurizations");
  const auto dim = static_cast<std::size_t>(covariates.cols());
  const double log_n = std::log(static_cast<double>(mask.size()));
  const bool scoring = candidates.size() > 1;

  SelectionResult out;
  std::vector<std::optional<EmResult>> fits(candidates.size());
  std::vector<std::optional<ModelDesign>> designs(candidates.size());
  std::optional<std::size_t> best;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const FeaturizationPair& pair = candidates[c];
    CandidateScore row;
    row.label = pair.label();
    row.df_pi = pair.pi.df(dim);
    row.df_mu = pair.mu.df(dim);
    try {
      designs[c] = ModelDesign::build(pair, covariates);
      if (criterion.kind == SelectionCriterion::Kind::bic || !scoring) {
        fits[c] = run_em(mask, *designs[c], family, settings, fitter);
        row.loglik = fits[c]->fit.expected_loglik;
        row.score = log_n * static_cast<double>(row.df_pi + row.df_mu) - 2.0 * row.loglik;
      } else {
        row.score = held_out_score(pair, *designs[c], mask, family, settings, fitter,
                                   criterion.folds, seed);
        row.loglik = row.score;
      }
      if (!std::isfinite(row.score)) throw EmError("non-finite selection score");
    } catch (const std::exception& ex) {
      row.failed = true;
      row.error = ex.what();
      fits[c].reset();
    }
    if (!row.failed) {
      const bool better =
          !best || (criterion.kind == SelectionCriterion::Kind::bic ? row.score < out.table[*best].score
                                                                    : row.score > out.table[*best].score);
      if (better) best = c;
    }
    out.table.push_back(std::move(row));
  }

  if (!best) {
    out.fallback = true;
    out.features = {Featurization::intercept(), Featurization::intercept()};
    out.design = ModelDesign::build(out.features, covariates);
    out.em = run_em(mask, out.design, family, settings, fitter);
    out.chosen = candidates.size();
    return out;
  }
  out.chosen = *best;
  out.features = candidates[*best];
  out.design = std::move(*designs[*best]);
  out.em = fits[*best] ? std::move(*fits[*best]) : run_em(mask, out.design, family, settings, fitter);
  return out;
}

}  // namespace adapt
