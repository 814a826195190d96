#include "adapt/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/tools/roots.hpp>

#include "adapt/expfam.hpp"

namespace adapt {

Region parse_region(std::string_view name) {
  if (name == "circle") return Region::circle;
  if (name == "ellipse") return Region::ellipse;
  if (name == "ring") return Region::ring;
  if (name == "empty" || name == "null") return Region::empty;
  throw ConfigError("unknown region '" + std::string(name) + "'");
}

std::string_view region_name(Region r) {
  switch (r) {
    case Region::circle:
      return "circle";
    case Region::ellipse:
      return "ellipse";
    case Region::ring:
      return "ring";
    case Region::empty:
      return "empty";
  }
  return "empty";
}

bool in_region(Region r, double x, double y) {
  switch (r) {
    case Region::circle:
      return x * x + y * y <= 30.0 * 30.0;
    case Region::ellipse: {
      const double c = std::cos(std::numbers::pi / 6.0);
      const double s = std::sin(std::numbers::pi / 6.0);
      const double u = c * x + s * y;
      const double v = -s * x + c * y;
      return (u / 50.0) * (u / 50.0) + (v / 20.0) * (v / 20.0) <= 1.0;
    }
    case Region::ring: {
      const double r2 = x * x + y * y;
      return r2 >= 40.0 * 40.0 && r2 <= 55.0 * 55.0;
    }
    case Region::empty:
      return false;
  }
  return false;
}

HypothesisSet generate_example1(Region region, std::uint64_t seed, std::size_t grid, double signal) {
  if (grid < 2) throw ConfigError("grid needs at least 2 points per side");
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t n = grid * grid;
  RowMatrix x(static_cast<Eigen::Index>(n), 2);
  std::vector<double> p(n);
  std::vector<bool> truth(n);
  for (std::size_t a = 0; a < grid; ++a) {
    for (std::size_t b = 0; b < grid; ++b) {
      const std::size_t i = a * grid + b;
      const double u = -100.0 + 200.0 * static_cast<double>(a) / static_cast<double>(grid - 1);
      const double v = -100.0 + 200.0 * static_cast<double>(b) / static_cast<double>(grid - 1);
      x(static_cast<Eigen::Index>(i), 0) = u;
      x(static_cast<Eigen::Index>(i), 1) = v;
      truth[i] = in_region(region, u, v);
      const double z = noise(rng) + (truth[i] ? signal : 0.0);
      p[i] = upper_normal_tail(z);
    }
  }
  return HypothesisSet::ingest(p, std::move(x), std::move(truth));
}

namespace {

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

double solve_intercept(std::span<const double> offsets, double target) {
  if (!(target > 0.0 && target < 1.0)) throw ConfigError("target mean must lie in (0, 1)");
  auto gap = [&](double t0) {
    double s = 0.0;
    for (double o : offsets) s += sigmoid(t0 + o);
    return s / static_cast<double>(offsets.size()) - target;
  };
  const auto [lo_o, hi_o] = std::minmax_element(offsets.begin(), offsets.end());
  double lo = std::log(target / (1.0 - target)) - *hi_o - 1.0;
  double hi = std::log(target / (1.0 - target)) - *lo_o + 1.0;
  const auto r = boost::math::tools::bisect(
      gap, lo, hi, [](double a, double b) { return std::abs(b - a) <= 1e-12; });
  return 0.5 * (r.first + r.second);
}

Example2Data generate_example2(const Example2Params& params, std::uint64_t seed) {
  const std::size_t n = params.n;
  const std::size_t d = params.d;
  if (n == 0 || d == 0) throw ConfigError("example 2 needs n >= 1 and d >= 1");
  if (params.theta.size() > d || params.beta.size() > d) throw ConfigError("too many coefficients");
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  RowMatrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = unif(rng);
  }
  Example2Data out;
  std::vector<double> offsets(n);
  out.mu.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    double a = 0.0;
    double b = 0.0;
    for (std::size_t j = 0; j < params.theta.size(); ++j) a += params.theta[j] * x(r, static_cast<Eigen::Index>(j));
    for (std::size_t j = 0; j < params.beta.size(); ++j) b += params.beta[j] * x(r, static_cast<Eigen::Index>(j));
    offsets[i] = a;
    out.mu[i] = std::max(b, 1.0);
  }
  out.theta0 = solve_intercept(offsets, params.target_pi);
  out.pi1.resize(n);
  std::vector<double> p(n);
  std::vector<bool> truth(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.pi1[i] = sigmoid(out.theta0 + offsets[i]);
    truth[i] = unif(rng) < out.pi1[i];
    const double u = unif(rng);
    p[i] = truth[i] ? std::pow(u, out.mu[i]) : u;
  }
  out.data = HypothesisSet::ingest(p, std::move(x), std::move(truth));
  return out;
}

Score score(std::span<const std::size_t> rejections, const std::vector<bool>& truth) {
  std::size_t false_rejections = 0;
  std::size_t true_rejections = 0;
  for (std::size_t i : rejections) (truth.at(i) ? true_rejections : false_rejections)++;
  const auto signals = static_cast<std::size_t>(std::count(truth.begin(), truth.end(), true));
  Score s;
  if (!rejections.empty()) {
    s.fdp = static_cast<double>(false_rejections) / static_cast<double>(rejections.size());
  }
  if (signals > 0) s.power = static_cast<double>(true_rejections) / static_cast<double>(signals);
  return s;
}

PValueSampler fuzzy_mlr_gaussian(double theta, double theta0) {
  return [theta, theta0](Rng& rng) {
    std::normal_distribution<double> t(theta, 1.0);
    // Continuous T: G0(T+) = G0(T), so the randomization drops out.
    return upper_normal_tail(t(rng) - theta0);
  };
}

PValueSampler fuzzy_mlr_binomial(std::size_t trials, double q, double q0) {
  const boost::math::binomial_distribution<double> null(static_cast<double>(trials), q0);
  return [trials, q, null](Rng& rng) {
    std::binomial_distribution<std::size_t> t(trials, q);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto k = static_cast<double>(t(rng));
    // G0(k) = P(T >= k), G0(k+) = P(T > k).
    const double above = boost::math::cdf(boost::math::complement(null, k));
    const double at_least = k > 0.0 ? boost::math::cdf(boost::math::complement(null, k - 1.0)) : 1.0;
    return above + u(rng) * (at_least - above);
  };
}

PValueSampler grid_uniform(std::size_t permutations) {
  return [permutations](Rng& rng) {
    std::uniform_int_distribution<std::size_t> k(1, permutations + 1);
    return static_cast<double>(k(rng)) / static_cast<double>(permutations + 1);
  };
}

LemmaView::LemmaView(std::size_t t, const std::vector<std::uint8_t>& in_c,
                     const std::vector<std::uint8_t>& b)
    : t_(t), in_c_(in_c), b_(b) {
  for (std::size_t i = 0; i < in_c.size(); ++i) {
    if (in_c[i]) {
      ++size_c_;
      sum_c_ += b[i];
    }
  }
}

bool LemmaView::b(std::size_t i) const {
  if (in_c_[i]) throw NonMeasurableError("rule read b_" + std::to_string(i) + " inside C_t");
  return b_[i] != 0;
}

namespace {

std::vector<std::uint8_t> members(const LemmaView& v) {
  std::vector<std::uint8_t> c(v.n());
  for (std::size_t i = 0; i < v.n(); ++i) c[i] = v.in_c(i) ? 1 : 0;
  return c;
}

void drop_extreme(std::vector<std::uint8_t>& c, bool largest) {
  if (largest) {
    for (std::size_t i = c.size(); i > 0; --i) {
      if (c[i - 1]) {
        c[i - 1] = 0;
        return;
      }
    }
  } else {
    for (auto& v : c) {
      if (v) {
        v = 0;
        return;
      }
    }
  }
}

std::vector<LemmaRule> build_rules() {
  std::vector<LemmaRule> rules;
  rules.push_back({"drop_max_index",
                   [](const LemmaView& v) {
                     auto c = members(v);
                     if (v.sum_c() > 0) drop_extreme(c, true);
                     return c;
                   },
                   [](const LemmaView& v) { return v.sum_c() <= 1; }});
  rules.push_back({"halve_until_ratio",
                   [](const LemmaView& v) {
                     auto c = members(v);
                     for (std::size_t k = 0; k < (v.size_c() + 1) / 2; ++k) drop_extreme(c, true);
                     return c;
                   },
                   [](const LemmaView& v) {
                     const double a = static_cast<double>(v.size_c() - v.sum_c());
                     return (1.0 + a) / static_cast<double>(std::max<std::size_t>(v.sum_c(), 1)) <= 0.5;
                   }});
  rules.push_back({"outside_parity",
                   [](const LemmaView& v) {
                     std::size_t ones = 0;
                     for (std::size_t i = 0; i < v.n(); ++i) {
                       if (!v.in_c(i) && v.b(i)) ++ones;
                     }
                     auto c = members(v);
                     drop_extreme(c, ones % 2 == 1);
                     return c;
                   },
                   [](const LemmaView& v) { return 2 * v.sum_c() <= v.size_c(); }});
  rules.push_back({"drop_to_empty",
                   [](const LemmaView& v) {
                     auto c = members(v);
                     drop_extreme(c, false);
                     return c;
                   },
                   [](const LemmaView& v) { return v.size_c() == 0; }});
  return rules;
}

}  // namespace

const std::vector<LemmaRule>& lemma2_rules() {
  static const std::vector<LemmaRule> rules = build_rules();
  return rules;
}

const LemmaRule& lemma2_rule(std::string_view id) {
  for (const auto& r : lemma2_rules()) {
    if (r.id == id) return r;
  }
  throw ConfigError("unknown rule '" + std::string(id) + "'");
}

LemmaRule lemma2_peeking_rule() {
  return {"peek",
          [](const LemmaView& v) {
            auto c = members(v);
            for (std::size_t i = 0; i < v.n(); ++i) {
              if (v.in_c(i) && v.b(i)) c[i] = 0;
            }
            return c;
          },
          [](const LemmaView& v) { return v.sum_c() == 0; }};
}

Lemma2Report lemma2_check(std::size_t n, double rho, const LemmaRule& rule,
                          std::optional<std::vector<std::uint8_t>> c0) {
  if (n > 20) throw ConfigError("exhaustive enumeration is limited to n <= 20");
  if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("rho must lie in (0, 1]");
  const std::vector<std::uint8_t> start = c0 ? *c0 : std::vector<std::uint8_t>(n, 1);
  if (start.size() != n) throw ConfigError("C_0 size mismatch");
  Lemma2Report rep;
  rep.bound = 1.0L / static_cast<long double>(rho);
  const long double r = rho;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    std::vector<std::uint8_t> b(n);
    std::size_t ones = 0;
    for (std::size_t i = 0; i < n; ++i) {
      b[i] = (mask >> i) & 1U;
      ones += b[i];
    }
    const long double prob = std::pow(r, static_cast<long double>(ones)) *
                             std::pow(1.0L - r, static_cast<long double>(n - ones));
    if (prob == 0.0L) continue;
    std::vector<std::uint8_t> c = start;
    for (std::size_t t = 0;; ++t) {
      const LemmaView view(t, c, b);
      bool stop = rule.stop(view) || view.size_c() == 0;
      std::vector<std::uint8_t> next;
      if (!stop) {
        next = rule.shrink(view);
        if (next.size() != n) throw ConfigError("rule returned a set of the wrong size");
        for (std::size_t i = 0; i < n; ++i) {
          if (next[i] && !c[i]) throw ConfigError("rule " + rule.id + " grew the candidate set");
        }
        // A rule that stops shrinking stops the process.
        stop = next == c;
      }
      if (stop) {
        rep.lhs += prob * static_cast<long double>(1 + view.size_c()) /
                   static_cast<long double>(1 + view.sum_c());
        break;
      }
      c = std::move(next);
    }
  }
  return rep;
}

}  // namespace adapt
