#include "adapt/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace adapt {

Strategy parse_strategy(std::string_view name) {
  if (name == "level_surface" || name == "adapt") return Strategy::level_surface;
  if (name == "constant") return Strategy::constant;
  throw ConfigError("unknown strategy '" + std::string(name) + "'");
}

std::string_view strategy_name(Strategy s) {
  return s == Strategy::level_surface ? "level_surface" : "constant";
}

void EngineConfig::validate() const {
  if (!(s0 > 0.0 && s0 <= 0.5)) throw ConfigError("s0 must lie in (0, 0.5]");
  if (candidates.empty()) throw ConfigError("at least one featurization candidate is required");
  if (em.iterations < 1) throw ConfigError("EM needs at least one iteration");
  if (!(em.tolerance >= 0.0)) throw ConfigError("EM tolerance must be non-negative");
}

bool ProtocolTrace::complete() const {
  return !steps.empty() && steps.back().A + steps.back().R == 0;
}

AdaptEngine::AdaptEngine(HypothesisSet data, EngineConfig config)
    : data_(std::move(data)), config_(std::move(config)) {
  config_.validate();
  if (data_.size() == 0) throw DataError("no hypotheses");
  covariates_ = data_.covariates();
  const std::size_t n = data_.size();
  cadence_ = config_.refit_every ? config_.refit_every : (n + 19) / 20;
  config_.fitter.lasso.seed = config_.seed;
  view_ = mask(data_, ThresholdSurface::constant(n, config_.s0));
  trace_.reveal_time.assign(n, kNeverRevealed);
  trace_.revealed_value.assign(n, std::numeric_limits<double>::quiet_NaN());
  std::vector<std::size_t> initial;
  for (std::size_t i = 0; i < n; ++i) {
    if (view_.is_revealed(i)) initial.push_back(i);
  }
  record_step(std::move(initial));
  if (config_.strategy == Strategy::level_surface && !terminal()) select_model();
}

void AdaptEngine::record_step(std::vector<std::size_t> revealed) {
  TraceStep st;
  st.t = trace_.steps.size();
  st.A = view_.A;
  st.R = view_.R;
  st.fdp_hat = view_.fdp_hat();
  for (std::size_t i : revealed) {
    trace_.reveal_time[i] = static_cast<std::int64_t>(st.t);
    trace_.revealed_value[i] = data_.pvalue(i);
  }
  st.revealed = std::move(revealed);
  trace_.steps.push_back(std::move(st));
}

std::vector<double> AdaptEngine::current_lfdr() const {
  if (!fit_) return {};
  return lfdr_profile(*fit_, view_).lfdr;
}

void AdaptEngine::select_model() {
  try {
    SelectionResult sel = select_featurization(config_.candidates, view_, covariates_,
                                               ExponentialFamilySpec(config_.family), config_.em,
                                               config_.fitter, config_.criterion, config_.seed);
    if (sel.fallback) warnings_.push_back("every candidate failed; using the intercept-only model");
    fit_ = std::move(sel.em.fit);
    design_ = std::move(sel.design);
    features_ = sel.features;
    selection_ = std::move(sel.table);
    history_.push_back({step_index(), *fit_});
    trace_.steps.back().refit = true;
    reveals_since_fit_ = 0;
  } catch (const std::exception& ex) {
    warnings_.push_back("step " + std::to_string(step_index()) +
                        ": model selection failed: " + ex.what());
  }
}

void AdaptEngine::refit() {
  if (config_.strategy != Strategy::level_surface || terminal()) return;
  if (!fit_ || !design_) {
    select_model();
    return;
  }
  try {
    EmResult em = run_em(view_, *design_, ExponentialFamilySpec(config_.family), config_.em,
                         config_.fitter, &*fit_);
    fit_ = std::move(em.fit);
    history_.push_back({step_index(), *fit_});
    trace_.steps.back().refit = true;
  } catch (const std::exception& ex) {
    warnings_.push_back("step " + std::to_string(step_index()) + ": refit failed (" + ex.what() +
                        "); keeping the previous fit");
  }
  reveals_since_fit_ = 0;
}

void AdaptEngine::set_candidates(std::vector<FeaturizationPair> candidates,
                                 std::optional<SelectionCriterion> c) {
  if (candidates.empty()) throw ConfigError("at least one featurization candidate is required");
  for (const auto& pair : candidates) (void)ModelDesign::build(pair, covariates_);
  config_.candidates = std::move(candidates);
  if (c) config_.criterion = *c;
  if (config_.strategy == Strategy::level_surface && !terminal()) select_model();
}

void AdaptEngine::set_family(Family family) {
  config_.family = family;
  fit_.reset();
  if (config_.strategy == Strategy::level_surface && !terminal()) select_model();
}

ThresholdSurface AdaptEngine::constant_update() const {
  double top = -1.0;
  for (std::size_t i = 0; i < view_.size(); ++i) {
    if (!view_.is_revealed(i)) top = std::max(top, view_.pprime[i]);
  }
  double next = 0.0;
  for (std::size_t i = 0; i < view_.size(); ++i) {
    if (!view_.is_revealed(i) && view_.pprime[i] < top) next = std::max(next, view_.pprime[i]);
  }
  std::vector<double> s(view_.surface.values());
  for (double& v : s) v = std::min(v, next);
  return view_.surface.refined_to(ThresholdSurface(std::move(s)));
}

void AdaptEngine::update_once() {
  if (terminal()) return;
  ThresholdSurface next;
  if (config_.strategy == Strategy::level_surface) {
    if (!fit_) {
      select_model();
    } else if (reveals_since_fit_ >= cadence_) {
      refit();
    }
  }
  if (config_.strategy == Strategy::level_surface && fit_) {
    next = reveal_one_update(view_.surface, *fit_, view_).surface;
  } else {
    next = constant_update();
  }
  MaskState moved = mask(data_, next);
  std::vector<std::size_t> newly;
  for (std::size_t i = 0; i < moved.size(); ++i) {
    if (moved.is_revealed(i) && !view_.is_revealed(i)) newly.push_back(i);
  }
  if (newly.empty()) throw std::logic_error("threshold update revealed nothing");
  view_ = std::move(moved);
  reveals_since_fit_ += newly.size();
  record_step(std::move(newly));
}

std::size_t AdaptEngine::step(std::size_t k) {
  std::size_t done = 0;
  while (done < k && !terminal()) {
    update_once();
    ++done;
  }
  return done;
}

bool AdaptEngine::run_until(double alpha) {
  while (true) {
    if (view_.fdp_hat() <= alpha) return true;
    if (terminal()) return false;
    update_once();
  }
}

AdaptResult AdaptEngine::finalize(std::optional<double> alpha, bool complete) {
  AdaptResult r;
  r.alpha = alpha;
  if (alpha) {
    const bool reached = run_until(*alpha);
    if (reached) {
      trace_.final_alpha_reached = *alpha;
      for (std::size_t i = 0; i < view_.size(); ++i) {
        if (!view_.is_revealed(i) && !data_.upper(i)) r.rejections.push_back(i);
      }
    }
  }
  r.surface_at_stop = view_.surface;
  if (complete) {
    while (!terminal()) update_once();
    r.qvalues = q_values(trace_);
  }
  r.trace = trace_;
  r.final_fit = fit_;
  r.lfdr = current_lfdr();
  r.features = features_;
  r.selection = selection_;
  r.fits = history_;
  r.warnings = warnings_;
  return r;
}

AdaptResult run_adapt(const HypothesisSet& h, const EngineConfig& config, std::optional<double> alpha) {
  AdaptEngine engine(h, config);
  return engine.finalize(alpha, !alpha.has_value());
}

std::vector<double> q_values(const ProtocolTrace& trace) {
  if (!trace.complete()) throw ConfigError("q-values need a trace run to full unmasking");
  std::vector<double> running(trace.steps.size());
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < trace.steps.size(); ++t) {
    best = std::min(best, trace.steps[t].fdp_hat);
    running[t] = best;
  }
  std::vector<double> q(trace.reveal_time.size(), 1.0);
  for (std::size_t i = 0; i < q.size(); ++i) {
    const std::int64_t t = trace.reveal_time[i];
    if (t <= 0 || !(trace.revealed_value[i] < 0.5)) continue;
    q[i] = std::min(1.0, running[static_cast<std::size_t>(t - 1)]);
  }
  return q;
}

std::optional<std::size_t> first_step_below(const ProtocolTrace& trace, double alpha) {
  for (const auto& st : trace.steps) {
    if (st.fdp_hat <= alpha) return st.t;
  }
  return std::nullopt;
}

std::vector<std::size_t> rejections_at(const std::vector<double>& qvalues, double alpha) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < qvalues.size(); ++i) {
    if (qvalues[i] <= alpha) out.push_back(i);
  }
  return out;
}

WindowFdp moving_window_fdp(const ProtocolTrace& trace, std::size_t t, std::size_t w) {
  if (t >= trace.steps.size()) throw ConfigError("window start beyond the trace");
  std::size_t a_end = 0;
  std::size_t r_end = 0;
  if (w != kInfiniteWindow) {
    if (w > trace.steps.size() - 1 - t) throw ConfigError("window extends beyond the trace");
    a_end = trace.steps[t + w].A;
    r_end = trace.steps[t + w].R;
  }
  const double da = static_cast<double>(trace.steps[t].A - a_end);
  const double dr = static_cast<double>(std::max<std::size_t>(1, trace.steps[t].R - r_end));
  return {da / dr, (1.0 + da) / dr};
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  if (n != b.size() || n < 2) return std::numeric_limits<double>::quiet_NaN();
  double ma = 0.0;
  double mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sab / std::sqrt(saa * sbb);
}

std::vector<InfoLossPoint> info_loss_correlation(const HypothesisSet& h, const AdaptResult& result,
                                                 const EngineConfig& config,
                                                 const std::vector<double>& alphas) {
  const ExponentialFamilySpec family(config.family);
  const ModelDesign design = ModelDesign::build(result.features, h.covariates());
  const MaskState full = mask(h, ThresholdSurface::constant(h.size(), 0.0));
  FitterConfig fitter = config.fitter;
  fitter.lasso.seed = config.seed;
  // With nothing masked the default start sits at pi1 = 1, where EM crawls, so
  // the reference is also fitted from the run's last fit and the start with the
  // higher likelihood wins.
  EmSettings settings = config.em;
  settings.iterations = std::max(settings.iterations, 200);
  settings.tolerance = std::min(settings.tolerance, 1e-9);
  TwoGroupsFit star = run_em(full, design, family, settings, fitter).fit;
  if (result.final_fit) {
    const TwoGroupsFit warm = run_em(full, design, family, settings, fitter, &*result.final_fit).fit;
    if (observed_loglik(warm, full) > observed_loglik(star, full)) star = warm;
  }

  auto lfdr_at_p = [&](const TwoGroupsFit& fit) {
    std::vector<double> out(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) out[i] = local_fdr(fit, h.pvalue(i), i);
    return out;
  };
  const std::vector<double> reference = lfdr_at_p(star);

  std::vector<InfoLossPoint> out;
  for (double alpha : alphas) {
    InfoLossPoint pt;
    pt.alpha = alpha;
    pt.step = first_step_below(result.trace, alpha);
    if (pt.step) {
      const FitSnapshot* in_force = nullptr;
      for (const auto& snap : result.fits) {
        if (snap.step <= *pt.step) in_force = &snap;
      }
      if (in_force) {
        const double r = pearson(lfdr_at_p(in_force->fit), reference);
        if (std::isfinite(r)) pt.correlation = r;
      }
    }
    out.push_back(pt);
  }
  return out;
}

}  // namespace adapt
