#include "adapt/glm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "adapt/core.hpp"

namespace adapt {

namespace {

constexpr double kEtaClamp = 30.0;

double y_log_y_over(double y, double mu) { return y > 0.0 ? y * std::log(y / mu) : 0.0; }

}  // namespace

Link parse_link(std::string_view name) {
  if (name == "logit") return Link::logit;
  if (name == "inverse") return Link::inverse;
  if (name == "log") return Link::log;
  if (name == "identity") return Link::identity;
  throw ConfigError("unknown link '" + std::string(name) + "'");
}

std::string_view link_name(Link link) {
  switch (link) {
    case Link::logit:
      return "logit";
    case Link::inverse:
      return "inverse";
    case Link::log:
      return "log";
    case Link::identity:
      return "identity";
  }
  return "identity";
}

double GlmSpec::link_fn(double mu) const {
  switch (link) {
    case Link::logit:
      return std::log(mu / (1.0 - mu));
    case Link::inverse:
      return 1.0 / mu;
    case Link::log:
      return std::log(mu);
    case Link::identity:
      return mu;
  }
  return mu;
}

double GlmSpec::inverse_link(double eta) const {
  switch (link) {
    case Link::logit: {
      const double e = std::clamp(eta, -kEtaClamp, kEtaClamp);
      return 1.0 / (1.0 + std::exp(-e));
    }
    case Link::inverse:
      return 1.0 / eta;
    case Link::log:
      return std::exp(std::min(eta, 700.0));
    case Link::identity:
      return eta;
  }
  return eta;
}

double GlmSpec::link_derivative(double mu) const {
  switch (link) {
    case Link::logit:
      return 1.0 / (mu * (1.0 - mu));
    case Link::inverse:
      return -1.0 / (mu * mu);
    case Link::log:
      return 1.0 / mu;
    case Link::identity:
      return 1.0;
  }
  return 1.0;
}

double GlmSpec::variance(double mu) const {
  switch (family) {
    case GlmFamily::binomial:
      return mu * (1.0 - mu);
    case GlmFamily::gamma:
      return mu * mu;
    case GlmFamily::gaussian:
      return 1.0;
  }
  return 1.0;
}

bool GlmSpec::valid_mean(double mu) const {
  if (!std::isfinite(mu)) return false;
  switch (family) {
    case GlmFamily::binomial:
      return mu > 0.0 && mu < 1.0;
    case GlmFamily::gamma:
      return mu > 0.0;
    case GlmFamily::gaussian:
      return true;
  }
  return true;
}

double GlmSpec::unit_deviance(double y, double mu) const {
  switch (family) {
    case GlmFamily::binomial:
      return 2.0 * (y_log_y_over(y, mu) + y_log_y_over(1.0 - y, 1.0 - mu));
    case GlmFamily::gamma:
      return 2.0 * (-std::log(y / mu) + (y - mu) / mu);
    case GlmFamily::gaussian:
      return (y - mu) * (y - mu);
  }
  return 0.0;
}

Eigen::VectorXd GlmFit::predict(const Eigen::MatrixXd& design) const {
  Eigen::VectorXd eta = design * coefficients;
  for (Eigen::Index i = 0; i < eta.size(); ++i) eta[i] = spec.inverse_link(eta[i]);
  return eta;
}

namespace {

void validate_inputs(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                     const GlmSpec& spec) {
  if (x.rows() != y.size() || w.size() != y.size()) {
    throw DataError("GLM design, response, and weights disagree in length");
  }
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (!std::isfinite(w[i]) || w[i] < 0.0) throw DataError("GLM weights must be finite and >= 0");
    const double v = y[i];
    bool ok = std::isfinite(v);
    if (spec.family == GlmFamily::binomial) ok = ok && v >= 0.0 && v <= 1.0;
    if (spec.family == GlmFamily::gamma) ok = ok && v > 0.0;
    if (!ok) throw DataError("GLM response out of range for family at row " + std::to_string(i));
  }
}

double initial_mean(const GlmSpec& spec, double y) {
  switch (spec.family) {
    case GlmFamily::binomial:
      return (y + 0.5) / 2.0;
    default:
      return y;
  }
}

double weighted_deviance(const GlmSpec& spec, const Eigen::VectorXd& y, const Eigen::VectorXd& mu,
                         const Eigen::VectorXd& w) {
  double dev = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (w[i] > 0.0) dev += w[i] * spec.unit_deviance(y[i], mu[i]);
  }
  return dev;
}

bool all_valid(const GlmSpec& spec, const Eigen::VectorXd& mu) {
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    if (!spec.valid_mean(mu[i])) return false;
  }
  return true;
}

Eigen::VectorXd apply_inverse_link(const GlmSpec& spec, const Eigen::VectorXd& eta) {
  Eigen::VectorXd mu(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) mu[i] = spec.inverse_link(eta[i]);
  return mu;
}

// Working weights and response for one IRLS step.
void working_quantities(const GlmSpec& spec, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                        const Eigen::VectorXd& eta, const Eigen::VectorXd& mu,
                        Eigen::VectorXd& W, Eigen::VectorXd& z) {
  const Eigen::Index n = y.size();
  W.resize(n);
  z.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = spec.link_derivative(mu[i]);
    const double v = spec.variance(mu[i]);
    W[i] = w[i] > 0.0 ? w[i] / (v * d * d) : 0.0;
    if (!std::isfinite(W[i])) W[i] = 0.0;
    z[i] = eta[i] + (y[i] - mu[i]) * d;
  }
}

bool design_has_intercept(const Eigen::MatrixXd& x) {
  return x.cols() > 0 && (x.col(0).array() == 1.0).all();
}

Eigen::VectorXd intercept_start(const GlmSpec& spec, const Eigen::MatrixXd& x,
                                const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(x.cols());
  const double wsum = w.sum();
  const double ybar = wsum > 0.0 ? w.dot(y) / wsum : y.mean();
  double m = ybar;
  if (spec.family == GlmFamily::binomial) m = std::clamp(m, 1e-6, 1.0 - 1e-6);
  beta[0] = spec.link_fn(m);
  return beta;
}

}  // namespace

GlmFit fit_weighted_glm(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                        const Eigen::VectorXd& w, const GlmSpec& spec,
                        const IrlsOptions& options, const Eigen::VectorXd* start) {
  validate_inputs(x, y, w, spec);
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();

  GlmFit fit;
  fit.spec = spec;
  fit.coefficients = Eigen::VectorXd::Zero(p);

  Eigen::VectorXd eta(n);
  Eigen::VectorXd mu(n);
  bool have_beta = false;
  if (start != nullptr && start->size() == p) {
    Eigen::VectorXd e = x * *start;
    Eigen::VectorXd m = apply_inverse_link(spec, e);
    if (all_valid(spec, m)) {
      fit.coefficients = *start;
      eta = e;
      mu = m;
      have_beta = true;
    }
  }
  if (!have_beta) {
    for (Eigen::Index i = 0; i < n; ++i) {
      mu[i] = initial_mean(spec, y[i]);
      eta[i] = spec.link_fn(mu[i]);
    }
  }
  double dev = weighted_deviance(spec, y, mu, w);
  const bool has_intercept = design_has_intercept(x);

  Eigen::VectorXd W;
  Eigen::VectorXd z;
  for (int it = 1; it <= options.max_iterations; ++it) {
    working_quantities(spec, y, w, eta, mu, W, z);
    Eigen::MatrixXd gram = x.transpose() * W.asDiagonal() * x;
    Eigen::VectorXd rhs = x.transpose() * (W.array() * z.array()).matrix();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    bool singular = ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-13) ||
                    (ldlt.vectorD().array() <= 0.0).any();
    if (singular) {
      const double ridge = 1e-8 * gram.trace();
      if (!(ridge > 0.0)) break;
      gram.diagonal().array() += ridge;
      ldlt.compute(gram);
      fit.ridge_used = true;
    }
    Eigen::VectorXd beta_new = ldlt.solve(rhs);
    Eigen::VectorXd eta_new = x * beta_new;
    Eigen::VectorXd mu_new = apply_inverse_link(spec, eta_new);

    if (!have_beta) {
      if (!all_valid(spec, mu_new) && has_intercept) {
        const Eigen::VectorXd ref = intercept_start(spec, x, y, w);
        for (int h = 0; h < options.max_halvings && !all_valid(spec, mu_new); ++h) {
          beta_new = 0.5 * (beta_new + ref);
          eta_new = x * beta_new;
          mu_new = apply_inverse_link(spec, eta_new);
        }
      }
      if (!all_valid(spec, mu_new)) {
        throw DataError("GLM iteration produced means outside the family range");
      }
    } else {
      double dev_new = all_valid(spec, mu_new) ? weighted_deviance(spec, y, mu_new, w)
                                                : std::numeric_limits<double>::infinity();
      int halvings = 0;
      while (!(dev_new <= dev) && halvings < options.max_halvings) {
        beta_new = 0.5 * (beta_new + fit.coefficients);
        eta_new = x * beta_new;
        mu_new = apply_inverse_link(spec, eta_new);
        dev_new = all_valid(spec, mu_new) ? weighted_deviance(spec, y, mu_new, w)
                                          : std::numeric_limits<double>::infinity();
        ++halvings;
      }
      if (!(dev_new <= dev)) {
        // No improving step exists along the IRLS direction; treat as converged.
        fit.iterations = it;
        fit.converged = true;
        break;
      }
    }

    const double dev_new = weighted_deviance(spec, y, mu_new, w);
    const double change = std::abs(dev_new - dev) / (std::abs(dev_new) + 0.1);
    fit.coefficients = beta_new;
    eta = eta_new;
    mu = mu_new;
    fit.deviance_trace.push_back(dev_new);
    fit.iterations = it;
    const bool first = !have_beta;
    have_beta = true;
    dev = dev_new;
    if (!first && change < options.tolerance) {
      fit.converged = true;
      break;
    }
  }
  fit.linear_predictor = x * fit.coefficients;
  fit.fitted = apply_inverse_link(spec, fit.linear_predictor);
  fit.deviance = weighted_deviance(spec, y, fit.fitted, w);
  return fit;
}

namespace {

// Standardized design for the lasso: column 0 is the intercept, other columns
// centered and scaled with the prior weights. Constant columns get scale 0.
struct Standardized {
  Eigen::MatrixXd x;
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  Standardized(const Eigen::MatrixXd& design, const Eigen::VectorXd& w) {
    const Eigen::Index p = design.cols();
    x = design;
    mean = Eigen::VectorXd::Zero(p);
    scale = Eigen::VectorXd::Ones(p);
    const double wsum = w.sum();
    x.col(0).setOnes();
    for (Eigen::Index j = 1; j < p; ++j) {
      const double m = w.dot(design.col(j)) / wsum;
      const double var = (w.array() * (design.col(j).array() - m).square()).sum() / wsum;
      mean[j] = m;
      if (var > 1e-24) {
        scale[j] = std::sqrt(var);
        x.col(j) = (design.col(j).array() - m) / scale[j];
      } else {
        scale[j] = 0.0;
        x.col(j).setZero();
      }
    }
  }

  Eigen::VectorXd to_original(const Eigen::VectorXd& b) const {
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(b.size());
    beta[0] = b[0];
    for (Eigen::Index j = 1; j < b.size(); ++j) {
      if (scale[j] > 0.0) {
        beta[j] = b[j] / scale[j];
        beta[0] -= beta[j] * mean[j];
      }
    }
    return beta;
  }

  Eigen::VectorXd to_standardized(const Eigen::VectorXd& beta) const {
    Eigen::VectorXd b = Eigen::VectorXd::Zero(beta.size());
    b[0] = beta[0];
    for (Eigen::Index j = 1; j < beta.size(); ++j) {
      if (scale[j] > 0.0) {
        b[j] = beta[j] * scale[j];
        b[0] += beta[j] * mean[j];
      }
    }
    return b;
  }
};

double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

// Weighted least-squares lasso by cyclic coordinate descent with active-set
// iterations. Minimizes sum W (z - x b)^2 / (2 wsum) + lambda |b_{1..}|_1.
void cd_wls(const Eigen::MatrixXd& x, const Eigen::VectorXd& W, const Eigen::VectorXd& z,
            double wsum, double lambda, double tol, Eigen::VectorXd& b) {
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  Eigen::VectorXd r = z - x * b;
  Eigen::VectorXd curv(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    curv[j] = (W.array() * x.col(j).array().square()).sum() / wsum;
  }
  auto update = [&](Eigen::Index j) {
    if (!(curv[j] > 0.0)) return 0.0;
    const double grad = (W.array() * x.col(j).array() * r.array()).sum() / wsum;
    const double old = b[j];
    const double raw = grad + curv[j] * old;
    const double next = j == 0 ? raw / curv[j] : soft_threshold(raw, lambda) / curv[j];
    const double delta = next - old;
    if (delta != 0.0) {
      b[j] = next;
      r.noalias() -= delta * x.col(j);
    }
    return std::sqrt(curv[j]) * std::abs(delta);
  };
  (void)n;
  for (int outer = 0; outer < 1000; ++outer) {
    double full_change = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) full_change = std::max(full_change, update(j));
    if (full_change < tol) return;
    for (int inner = 0; inner < 10000; ++inner) {
      double change = 0.0;
      for (Eigen::Index j = 0; j < p; ++j) {
        if (j == 0 || b[j] != 0.0) change = std::max(change, update(j));
      }
      if (change < tol) break;
    }
  }
}

struct PenalizedState {
  Eigen::VectorXd b;
  Eigen::VectorXd eta;
  Eigen::VectorXd mu;
  double objective = 0.0;
  double deviance = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> trace;
};

double penalized_objective(double dev, double wsum, double lambda, const Eigen::VectorXd& b) {
  return dev / (2.0 * wsum) + lambda * b.tail(b.size() - 1).cwiseAbs().sum();
}

PenalizedState fit_penalized(const Eigen::MatrixXd& xs, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& w, const GlmSpec& spec, double lambda,
                             const LassoOptions& opt, Eigen::VectorXd b0) {
  PenalizedState st;
  const double wsum = w.sum();
  st.b = std::move(b0);
  st.eta = xs * st.b;
  st.mu = apply_inverse_link(spec, st.eta);
  if (!all_valid(spec, st.mu)) {
    st.b = intercept_start(spec, xs, y, w);
    st.eta = xs * st.b;
    st.mu = apply_inverse_link(spec, st.eta);
  }
  st.deviance = weighted_deviance(spec, y, st.mu, w);
  st.objective = penalized_objective(st.deviance, wsum, lambda, st.b);

  Eigen::VectorXd W;
  Eigen::VectorXd z;
  for (int it = 1; it <= opt.irls.max_iterations; ++it) {
    working_quantities(spec, y, w, st.eta, st.mu, W, z);
    Eigen::VectorXd b = st.b;
    cd_wls(xs, W, z, wsum, lambda, opt.cd_tolerance, b);
    Eigen::VectorXd eta = xs * b;
    Eigen::VectorXd mu = apply_inverse_link(spec, eta);
    double dev = all_valid(spec, mu) ? weighted_deviance(spec, y, mu, w)
                                     : std::numeric_limits<double>::infinity();
    double obj = penalized_objective(dev, wsum, lambda, b);
    int halvings = 0;
    while (!(obj <= st.objective) && halvings < opt.irls.max_halvings) {
      b = 0.5 * (b + st.b);
      eta = xs * b;
      mu = apply_inverse_link(spec, eta);
      dev = all_valid(spec, mu) ? weighted_deviance(spec, y, mu, w)
                                : std::numeric_limits<double>::infinity();
      obj = penalized_objective(dev, wsum, lambda, b);
      ++halvings;
    }
    st.iterations = it;
    if (!(obj <= st.objective)) {
      st.converged = true;
      break;
    }
    const double change = std::abs(obj - st.objective) / (std::abs(obj) + 0.1);
    st.b = b;
    st.eta = eta;
    st.mu = mu;
    st.deviance = dev;
    st.objective = obj;
    st.trace.push_back(dev);
    if (change < opt.irls.tolerance) {
      st.converged = true;
      break;
    }
  }
  return st;
}

double lambda_max(const Eigen::MatrixXd& xs, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                  const GlmSpec& spec) {
  const Eigen::VectorXd b = intercept_start(spec, xs, y, w);
  const Eigen::VectorXd eta = xs * b;
  const Eigen::VectorXd mu = apply_inverse_link(spec, eta);
  Eigen::VectorXd W;
  Eigen::VectorXd z;
  working_quantities(spec, y, w, eta, mu, W, z);
  const Eigen::VectorXd r = z - eta;
  const double wsum = w.sum();
  double best = 0.0;
  for (Eigen::Index j = 1; j < xs.cols(); ++j) {
    best = std::max(best, std::abs((W.array() * xs.col(j).array() * r.array()).sum()) / wsum);
  }
  return best;
}

std::vector<double> make_grid(const Eigen::MatrixXd& xs, const Eigen::VectorXd& y,
                              const Eigen::VectorXd& w, const GlmSpec& spec,
                              const LassoOptions& opt) {
  std::vector<double> grid = opt.lambda_grid;
  if (grid.empty()) {
    const double top = lambda_max(xs, y, w, spec);
    const std::size_t L = std::max<std::size_t>(opt.path_length, 2);
    for (std::size_t k = 0; k < L; ++k) {
      const double frac = static_cast<double>(k) / static_cast<double>(L - 1);
      grid.push_back(top * std::pow(opt.min_ratio, frac));
    }
  }
  std::sort(grid.begin(), grid.end(), std::greater<>());
  return grid;
}

GlmFit finish(const Standardized& s, const Eigen::MatrixXd& design, const GlmSpec& spec,
              const PenalizedState& st, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
              double lambda) {
  GlmFit fit;
  fit.spec = spec;
  fit.coefficients = s.to_original(st.b);
  fit.linear_predictor = design * fit.coefficients;
  fit.fitted = apply_inverse_link(spec, fit.linear_predictor);
  fit.deviance = weighted_deviance(spec, y, fit.fitted, w);
  fit.deviance_trace = st.trace;
  fit.converged = st.converged;
  fit.iterations = st.iterations;
  fit.lambda = lambda;
  return fit;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(rows[k]);
  return out;
}

Eigen::VectorXd take(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) out[static_cast<Eigen::Index>(k)] = v[rows[k]];
  return out;
}

}  // namespace

GlmFit fit_l1_glm_fixed(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                        const Eigen::VectorXd& w, const GlmSpec& spec, double lambda,
                        const LassoOptions& options, const Eigen::VectorXd* start) {
  validate_inputs(design, y, w, spec);
  if (!design_has_intercept(design)) throw ConfigError("L1 GLM needs an intercept in column 0");
  if (!(w.sum() > 0.0)) throw DataError("L1 GLM needs positive total weight");
  const Standardized s(design, w);
  Eigen::VectorXd b0 = start != nullptr && start->size() == design.cols()
                           ? s.to_standardized(*start)
                           : intercept_start(spec, s.x, y, w);
  const PenalizedState st = fit_penalized(s.x, y, w, spec, lambda, options, b0);
  return finish(s, design, spec, st, y, w, lambda);
}

GlmFit fit_l1_glm(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                  const Eigen::VectorXd& w, const GlmSpec& spec, const LassoOptions& options) {
  validate_inputs(design, y, w, spec);
  if (!design_has_intercept(design)) throw ConfigError("L1 GLM needs an intercept in column 0");
  if (!(w.sum() > 0.0)) throw DataError("L1 GLM needs positive total weight");
  const Standardized s(design, w);
  const std::vector<double> grid = make_grid(s.x, y, w, spec, options);

  std::size_t chosen = grid.size() - 1;
  const Eigen::Index n = design.rows();
  if (grid.size() > 1 && options.cv_folds >= 2 && static_cast<std::size_t>(n) >= options.cv_folds) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng rng(options.seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<double> cv_dev(grid.size(), 0.0);
    for (std::size_t fold = 0; fold < options.cv_folds; ++fold) {
      std::vector<Eigen::Index> train;
      std::vector<Eigen::Index> test;
      for (std::size_t k = 0; k < order.size(); ++k) {
        (k % options.cv_folds == fold ? test : train).push_back(order[k]);
      }
      const Eigen::MatrixXd xtr = take_rows(design, train);
      const Eigen::VectorXd ytr = take(y, train);
      const Eigen::VectorXd wtr = take(w, train);
      if (!(wtr.sum() > 0.0)) continue;
      const Standardized st(xtr, wtr);
      const Eigen::MatrixXd xte = take_rows(design, test);
      const Eigen::VectorXd yte = take(y, test);
      const Eigen::VectorXd wte = take(w, test);
      Eigen::VectorXd b = intercept_start(spec, st.x, ytr, wtr);
      for (std::size_t k = 0; k < grid.size(); ++k) {
        const PenalizedState ps = fit_penalized(st.x, ytr, wtr, spec, grid[k], options, b);
        b = ps.b;
        const Eigen::VectorXd mu = apply_inverse_link(spec, xte * st.to_original(ps.b));
        cv_dev[k] += all_valid(spec, mu) ? weighted_deviance(spec, yte, mu, wte)
                                         : std::numeric_limits<double>::infinity();
      }
    }
    chosen = static_cast<std::size_t>(std::min_element(cv_dev.begin(), cv_dev.end()) - cv_dev.begin());
  }

  Eigen::VectorXd b = intercept_start(spec, s.x, y, w);
  PenalizedState st;
  for (std::size_t k = 0; k <= chosen; ++k) {
    st = fit_penalized(s.x, y, w, spec, grid[k], options, b);
    b = st.b;
  }
  return finish(s, design, spec, st, y, w, grid[chosen]);
}

}  // namespace adapt
