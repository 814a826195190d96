#pragma once

// The AdaPT protocol driver. The engine owns the private hypothesis data; the
// updaters only ever see the masked view (MaskState) and the covariates.

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "adapt/core.hpp"
#include "adapt/em.hpp"
#include "adapt/select.hpp"
#include "adapt/threshold.hpp"

namespace adapt {

enum class Strategy {
  /// Reveal-one updates along level surfaces of the fitted lfdr.
  level_surface,
  /// Covariate-free threshold: reveal the largest masked p' each step.
  constant,
};

Strategy parse_strategy(std::string_view name);
std::string_view strategy_name(Strategy s);

struct EngineConfig {
  Family family = Family::beta_mixture;
  std::vector<FeaturizationPair> candidates{{Featurization::identity(), Featurization::identity()}};
  SelectionCriterion criterion{};
  double s0 = 0.45;
  /// Reveals between EM refits; 0 means ceil(n / 20).
  std::size_t refit_every = 0;
  EmSettings em{};
  FitterConfig fitter{};
  Strategy strategy = Strategy::level_surface;
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr std::int64_t kNeverRevealed = -1;

struct TraceStep {
  std::size_t t = 0;
  std::size_t A = 0;
  std::size_t R = 0;
  double fdp_hat = 0.0;
  /// Hypotheses that became visible on entering this step.
  std::vector<std::size_t> revealed;
  /// A model (re)fit preceded the update leaving this step.
  bool refit = false;
};

struct ProtocolTrace {
  std::vector<TraceStep> steps;
  std::vector<std::int64_t> reveal_time;
  /// p_i once revealed (public from then on); NaN while masked.
  std::vector<double> revealed_value;
  std::optional<double> final_alpha_reached;

  bool complete() const;
};

struct FitSnapshot {
  std::size_t step = 0;
  TwoGroupsFit fit;
};

struct AdaptResult {
  std::optional<double> alpha;
  std::vector<std::size_t> rejections;
  /// Empty unless the run went to full unmasking.
  std::vector<double> qvalues;
  ProtocolTrace trace;
  std::optional<TwoGroupsFit> final_fit;
  /// lfdr at p' under the final fit (empty without a fit).
  std::vector<double> lfdr;
  ThresholdSurface surface_at_stop;
  FeaturizationPair features;
  std::vector<CandidateScore> selection;
  std::vector<FitSnapshot> fits;
  std::vector<std::string> warnings;
};

class AdaptEngine {
 public:
  AdaptEngine(HypothesisSet data, EngineConfig config);

  const MaskState& view() const { return view_; }
  const ProtocolTrace& trace() const { return trace_; }
  const EngineConfig& config() const { return config_; }
  std::size_t step_index() const { return trace_.steps.size() - 1; }
  bool terminal() const { return view_.masked_count() == 0; }
  std::size_t refit_every() const { return cadence_; }

  const std::optional<TwoGroupsFit>& fit() const { return fit_; }
  const FeaturizationPair& features() const { return features_; }
  const std::vector<CandidateScore>& selection_table() const { return selection_; }
  const std::vector<FitSnapshot>& fit_history() const { return history_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  /// lfdr at p' under the current fit; empty without a fit.
  std::vector<double> current_lfdr() const;

  /// Performs up to k updates; returns how many were made.
  std::size_t step(std::size_t k = 1);
  /// Updates until FDP-hat <= alpha or nothing is masked; true if the level was reached.
  bool run_until(double alpha);
  void refit();
  void set_candidates(std::vector<FeaturizationPair> candidates, std::optional<SelectionCriterion> c = {});
  void set_family(Family family);
  void set_strategy(Strategy s) { config_.strategy = s; }

  /// Rejections at the first step with FDP-hat <= alpha (running on as needed).
  /// With `complete`, the run then continues to full unmasking so q-values exist.
  AdaptResult finalize(std::optional<double> alpha, bool complete = true);

 private:
  void select_model();
  void update_once();
  void record_step(std::vector<std::size_t> revealed);
  ThresholdSurface constant_update() const;

  HypothesisSet data_;
  EngineConfig config_;
  RowMatrix covariates_;
  std::size_t cadence_ = 1;
  MaskState view_;
  ProtocolTrace trace_;
  std::optional<TwoGroupsFit> fit_;
  std::optional<ModelDesign> design_;
  FeaturizationPair features_;
  std::vector<CandidateScore> selection_;
  std::vector<FitSnapshot> history_;
  std::vector<std::string> warnings_;
  std::size_t reveals_since_fit_ = 0;
  bool refit_pending_ = false;
};

AdaptResult run_adapt(const HypothesisSet& h, const EngineConfig& config,
                      std::optional<double> alpha = std::nullopt);

/// q_i = min over t < t*_i of FDP-hat_t, capped at 1; hypotheses revealed with
/// p >= 0.5 (or never) get 1.
std::vector<double> q_values(const ProtocolTrace& trace);

/// First step whose FDP-hat is <= alpha.
std::optional<std::size_t> first_step_below(const ProtocolTrace& trace, double alpha);

/// Indices rejected at level alpha according to a q-value vector.
std::vector<std::size_t> rejections_at(const std::vector<double>& qvalues, double alpha);

inline constexpr std::size_t kInfiniteWindow = std::numeric_limits<std::size_t>::max();

struct WindowFdp {
  double fdp = 0.0;
  double fdp_plus = 0.0;
};

/// (A_t - A_{t+w}) / max(1, R_t - R_{t+w}) and the +1 variant. With
/// kInfiniteWindow the far end is the fully unmasked state A = R = 0.
WindowFdp moving_window_fdp(const ProtocolTrace& trace, std::size_t t, std::size_t w);

struct InfoLossPoint {
  double alpha = 0.0;
  std::optional<std::size_t> step;
  std::optional<double> correlation;
};

double pearson(const std::vector<double>& a, const std::vector<double>& b);

/// Pearson correlation between lfdr under the fit in force at the first step
/// with FDP-hat <= alpha and lfdr under a fit to the fully revealed data, both
/// evaluated at the true p-values.
std::vector<InfoLossPoint> info_loss_correlation(const HypothesisSet& h, const AdaptResult& result,
                                                 const EngineConfig& config,
                                                 const std::vector<double>& alphas);

}  // namespace adapt
