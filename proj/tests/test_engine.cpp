#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "adapt/baselines.hpp"
#include "adapt/engine.hpp"

using namespace adapt;

namespace {

using Idx = std::vector<std::size_t>;

// One covariate; non-nulls concentrate at large x with p = U^3.
HypothesisSet toy_data(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> p(n);
  std::vector<std::vector<double>> x(n);
  std::vector<bool> truth(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = u(rng);
    x[i] = {xi};
    truth[i] = u(rng) < 0.1 + 0.6 * xi;
    p[i] = truth[i] ? std::pow(u(rng), 4.0) : u(rng);
  }
  return HypothesisSet::ingest(p, x, truth);
}

EngineConfig fast_config() {
  EngineConfig c;
  c.candidates = {FeaturizationPair::parse("identity")};
  c.em.iterations = 5;
  return c;
}

ProtocolTrace hand_trace(const std::vector<double>& fdp, const std::vector<std::int64_t>& reveal,
                         const std::vector<double>& value) {
  ProtocolTrace tr;
  for (std::size_t t = 0; t < fdp.size(); ++t) {
    TraceStep st;
    st.t = t;
    st.fdp_hat = fdp[t];
    tr.steps.push_back(st);
  }
  tr.reveal_time = reveal;
  tr.revealed_value = value;
  return tr;
}

}  // namespace

TEST_CASE("configuration is validated") {
  const auto h = toy_data(30, 1);
  EngineConfig c = fast_config();
  c.s0 = 0.0;
  CHECK_THROWS_AS(AdaptEngine(h, c), ConfigError);
  c.s0 = 0.6;
  CHECK_THROWS_AS(AdaptEngine(h, c), ConfigError);
  c = fast_config();
  c.candidates.clear();
  CHECK_THROWS_AS(AdaptEngine(h, c), ConfigError);
  CHECK_THROWS_AS(parse_strategy("greedy"), ConfigError);
  CHECK(parse_strategy(strategy_name(Strategy::constant)) == Strategy::constant);
}

TEST_CASE("all p-values above one half: nothing is ever rejected") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.5, 1.0);
  std::vector<double> p(50);
  std::vector<std::vector<double>> x(50);
  for (std::size_t i = 0; i < 50; ++i) {
    p[i] = u(rng);
    x[i] = {static_cast<double>(i)};
  }
  const AdaptResult r = run_adapt(HypothesisSet::ingest(p, x), fast_config(), 0.1);
  CHECK(r.rejections.empty());
  for (const auto& st : r.trace.steps) CHECK(st.R == 0);
  CHECK(r.trace.complete());
  CHECK_FALSE(r.trace.final_alpha_reached);
}

TEST_CASE("a single hypothesis can never be rejected below level 1") {
  const auto h = HypothesisSet::ingest(std::vector<double>{0.001}, std::vector<std::vector<double>>{{0.0}});
  const AdaptResult r = run_adapt(h, fast_config(), 0.5);
  CHECK(r.trace.steps.front().A == 0);
  CHECK(r.trace.steps.front().R == 1);
  CHECK(r.trace.steps.front().fdp_hat == 1.0);
  CHECK(r.trace.complete());
  CHECK(r.rejections.empty());
}

TEST_CASE("q-values are running minima of FDP-hat before the reveal") {
  // Path {1.0, 0.4, 0.2, 0.3, 0.0}; entry 3 is revealed large, entry 1 at t = 0.
  const auto q = q_values(hand_trace({1.0, 0.4, 0.2, 0.3, 0.0}, {3, 0, 2, 4, 3}, {0.01, 0.3, 0.02, 0.7, 0.04}));
  CHECK(q[0] == 0.2);
  CHECK(q[1] == 1.0);
  CHECK(q[2] == 0.4);
  CHECK(q[3] == 1.0);
  CHECK(q[4] == 0.2);
  CHECK(rejections_at(q, 0.2) == Idx{0, 4});
  auto partial = hand_trace({1.0}, {kNeverRevealed}, {NAN});
  partial.steps.back().R = 1;
  CHECK_THROWS_AS(q_values(partial), ConfigError);
}

TEST_CASE("moving-window FDP estimates") {
  ProtocolTrace tr;
  const std::vector<std::size_t> A{5, 4, 3, 3, 1, 0};
  const std::vector<std::size_t> R{10, 8, 6, 4, 1, 0};
  for (std::size_t t = 0; t < A.size(); ++t) {
    TraceStep st;
    st.t = t;
    st.A = A[t];
    st.R = R[t];
    st.fdp_hat = compute_fdp_hat(A[t], R[t]);
    tr.steps.push_back(st);
  }
  CHECK(moving_window_fdp(tr, 0, 2).fdp == 0.5);
  CHECK(moving_window_fdp(tr, 2, 1).fdp == 0.0);
  for (std::size_t t = 0; t < A.size(); ++t)
    CHECK(moving_window_fdp(tr, t, kInfiniteWindow).fdp_plus == tr.steps[t].fdp_hat);
  CHECK_THROWS_AS(moving_window_fdp(tr, 3, 3), ConfigError);
}

TEST_CASE("Pearson correlation conventions") {
  const std::vector<double> a{0.1, 0.5, 0.3, 0.9};
  std::vector<double> b;
  for (double v : a) b.push_back(0.5 * v + 0.2);
  CHECK(pearson(a, a) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(pearson(a, b) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(std::isnan(pearson(a, std::vector<double>(4, 0.3))));
}

TEST_CASE("protocol invariants on a full run") {
  const auto h = toy_data(300, 4);
  AdaptEngine engine(h, fast_config());
  CHECK(engine.refit_every() == 15);
  CHECK(engine.fit());
  ThresholdSurface prev = engine.view().surface;
  std::size_t updates = 0;
  while (!engine.terminal()) {
    const std::size_t masked = engine.view().masked_count();
    engine.step();
    ++updates;
    CHECK(engine.view().masked_count() < masked);
    CHECK(prev.dominates(engine.view().surface));
    prev = engine.view().surface;
  }
  CHECK(updates <= h.size());
  const auto& tr = engine.trace();
  for (std::size_t t = 1; t < tr.steps.size(); ++t) {
    CHECK(tr.steps[t].A <= tr.steps[t - 1].A);
    CHECK(tr.steps[t].R <= tr.steps[t - 1].R);
    CHECK(tr.steps[t].fdp_hat == compute_fdp_hat(tr.steps[t].A, tr.steps[t].R));
    CHECK_FALSE(tr.steps[t].revealed.empty());
  }
  // Every hypothesis is revealed exactly once.
  std::vector<int> seen(h.size(), 0);
  for (const auto& st : tr.steps) {
    for (std::size_t i : st.revealed) ++seen[i];
  }
  CHECK(std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; }));
  // Refits follow the cadence on reveals.
  CHECK(engine.fit_history().size() >= 2);
  for (std::size_t k = 1; k < engine.fit_history().size(); ++k) {
    std::size_t reveals = 0;
    for (std::size_t t = engine.fit_history()[k - 1].step + 1; t <= engine.fit_history()[k].step; ++t)
      reveals += tr.steps[t].revealed.size();
    CHECK(reveals >= engine.refit_every());
  }
}

TEST_CASE("q-value rejections match stopped runs") {
  const auto h = toy_data(250, 6);
  const EngineConfig c = fast_config();
  const AdaptResult full = run_adapt(h, c);
  REQUIRE(full.qvalues.size() == h.size());
  for (double alpha : {0.05, 0.1, 0.15, 0.2, 0.3}) {
    const AdaptResult stopped = run_adapt(h, c, alpha);
    CHECK(stopped.rejections == rejections_at(full.qvalues, alpha));
  }
}

TEST_CASE("identical inputs give identical results") {
  const auto h = toy_data(200, 8);
  const AdaptResult a = run_adapt(h, fast_config(), 0.1);
  const AdaptResult b = run_adapt(h, fast_config(), 0.1);
  CHECK(a.rejections == b.rejections);
  REQUIRE(a.trace.steps.size() == b.trace.steps.size());
  for (std::size_t t = 0; t < a.trace.steps.size(); ++t) CHECK(a.trace.steps[t].revealed == b.trace.steps[t].revealed);
  CHECK(a.final_fit->pi1 == b.final_fit->pi1);
  CHECK(a.final_fit->mu == b.final_fit->mu);
}

TEST_CASE("constant thresholds reproduce Barber-Candes") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  EngineConfig c = fast_config();
  c.strategy = Strategy::constant;
  c.s0 = 0.5;
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = 20 + rep * 3;
    std::vector<double> p(n);
    std::vector<std::vector<double>> x(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = u(rng) < 0.3 ? 0.02 * u(rng) : u(rng);
      x[i] = {u(rng)};
    }
    const auto h = HypothesisSet::ingest(p, x);
    for (double alpha : {0.1, 0.2, 0.5}) {
      CHECK(run_adapt(h, c, alpha).rejections == barber_candes(h.pvalues(), alpha).rejections);
    }
  }
}

TEST_CASE("flipping a masked pair leaves the run unchanged until either is revealed") {
  const auto h = toy_data(200, 12);
  const MaskState m0 = mask(h, ThresholdSurface::constant(h.size(), 0.45));
  std::size_t lo = h.size();
  std::size_t hi = h.size();
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (m0.is_revealed(i)) continue;
    if (h.upper(i) && hi == h.size()) hi = i;
    if (!h.upper(i) && lo == h.size()) lo = i;
  }
  REQUIRE(lo < h.size());
  REQUIRE(hi < h.size());
  const Idx pair{lo, hi};
  AdaptEngine a(h, fast_config());
  AdaptEngine b(h.with_reflected(pair), fast_config());
  while (!a.terminal() && !a.view().is_revealed(lo) && !a.view().is_revealed(hi)) {
    CHECK(a.view().visible == b.view().visible);
    CHECK(a.view().A == b.view().A);
    CHECK(a.view().R == b.view().R);
    CHECK(a.current_lfdr() == b.current_lfdr());
    a.step();
    b.step();
    CHECK(a.trace().steps.back().revealed == b.trace().steps.back().revealed);
  }
}

TEST_CASE("switching family mid-run replays deterministically") {
  const auto h = toy_data(200, 14);
  auto script = [&]() {
    AdaptEngine e(h, fast_config());
    e.step(20);
    e.set_family(Family::gaussian_mixture);
    e.step(5);
    e.refit();
    return e.finalize(0.2);
  };
  const AdaptResult a = script();
  const AdaptResult b = script();
  CHECK(a.rejections == b.rejections);
  CHECK(a.qvalues == b.qvalues);
  CHECK(a.final_fit->family.family() == Family::gaussian_mixture);
}

TEST_CASE("info-loss correlation uses the fit in force") {
  const auto h = toy_data(300, 16);
  const EngineConfig c = fast_config();
  const AdaptResult r = run_adapt(h, c);
  const auto pts = info_loss_correlation(h, r, c, {0.1, 0.2, 0.5, 1.0});
  REQUIRE(pts.size() == 4);
  for (const auto& pt : pts) {
    if (!pt.step) continue;
    REQUIRE(pt.correlation);
    CHECK(*pt.correlation <= 1.0 + 1e-12);
    CHECK(*pt.correlation >= -1.0 - 1e-12);
  }
  CHECK(pts[1].step == first_step_below(r.trace, 0.2));
  CHECK(pts[3].step == first_step_below(r.trace, 1.0));
}
