#include "adapt/spline.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>

namespace adapt {

namespace {

double quantile_sorted(const std::vector<double>& v, double q) {
  const double h = static_cast<double>(v.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

double cube_plus(double u) { return u > 0.0 ? u * u * u : 0.0; }

}  // namespace

NaturalSplineBasis::NaturalSplineBasis(std::span<const double> training, std::size_t knots) {
  if (knots < 2) throw ConfigError("natural spline needs at least 2 knots");
  std::vector<double> sorted(training.begin(), training.end());
  std::sort(sorted.begin(), sorted.end());
  const auto distinct = static_cast<std::size_t>(
      std::unique(sorted.begin(), sorted.end()) - sorted.begin());
  if (distinct < knots + 4) {
    throw DataError("spline with " + std::to_string(knots) + " knots needs at least " +
                    std::to_string(knots + 4) + " distinct covariate values, got " +
                    std::to_string(distinct));
  }
  sorted.assign(training.begin(), training.end());
  std::sort(sorted.begin(), sorted.end());

  lo_ = sorted.front();
  scale_ = sorted.back() - sorted.front();
  knots_.resize(knots + 1);
  for (std::size_t j = 0; j <= knots; ++j) {
    const double q = static_cast<double>(j) / static_cast<double>(knots);
    knots_[j] = (quantile_sorted(sorted, q) - lo_) / scale_;
  }
  for (std::size_t j = 1; j < knots_.size(); ++j) {
    if (!(knots_[j] > knots_[j - 1])) {
      throw DataError("equi-quantile knots are not distinct; covariate has too many ties");
    }
  }
}

void NaturalSplineBasis::evaluate(double x, std::span<double> out) const {
  // Truncated-power form: N_1 = x, N_{k+1} = d_k - d_{K-1}, with
  // d_k(x) = ((x - xi_k)_+^3 - (x - xi_K)_+^3) / (xi_K - xi_k).
  const double u = (x - lo_) / scale_;
  const std::size_t K = knots_.size();
  const double last = knots_[K - 1];
  auto d = [&](std::size_t k) {
    return (cube_plus(u - knots_[k]) - cube_plus(u - last)) / (last - knots_[k]);
  };
  out[0] = u;
  const double d_penultimate = d(K - 2);
  for (std::size_t k = 0; k + 2 < K; ++k) out[k + 1] = d(k) - d_penultimate;
}

Eigen::MatrixXd spline_basis(std::span<const double> covariate, std::size_t knots) {
  NaturalSplineBasis basis(covariate, knots);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(covariate.size()),
                      static_cast<Eigen::Index>(basis.columns() + 1));
  std::vector<double> row(basis.columns());
  for (std::size_t i = 0; i < covariate.size(); ++i) {
    basis.evaluate(covariate[i], row);
    const auto r = static_cast<Eigen::Index>(i);
    out(r, 0) = 1.0;
    for (std::size_t j = 0; j < row.size(); ++j) out(r, static_cast<Eigen::Index>(j + 1)) = row[j];
  }
  return out;
}

std::size_t Featurization::df(std::size_t dim) const {
  switch (kind) {
    case Kind::identity:
      return dim + 1;
    case Kind::spline:
      return (indices.empty() ? dim : indices.size()) * knots + 1;
    case Kind::subset:
      return indices.size() + 1;
  }
  return 1;
}

std::string Featurization::label() const {
  std::ostringstream os;
  auto list = [&] {
    for (std::size_t k = 0; k < indices.size(); ++k) os << (k ? "," : "") << indices[k];
  };
  switch (kind) {
    case Kind::identity:
      os << "identity";
      break;
    case Kind::spline:
      os << "spline(" << knots;
      if (!indices.empty()) {
        os << ";";
        list();
      }
      os << ")";
      break;
    case Kind::subset:
      if (indices.empty()) {
        os << "intercept";
      } else {
        os << "subset(";
        list();
        os << ")";
      }
      break;
  }
  return os.str();
}

namespace {

std::vector<std::size_t> parse_indices(std::string_view text) {
  std::vector<std::size_t> out;
  std::string token;
  std::istringstream is{std::string(text)};
  while (std::getline(is, token, ',')) {
    if (token.empty()) continue;
    try {
      std::size_t pos = 0;
      const auto v = std::stoul(token, &pos);
      if (pos != token.size()) throw std::invalid_argument("trailing");
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("bad covariate index '" + token + "' in featurization");
    }
  }
  return out;
}

}  // namespace

Featurization Featurization::parse(std::string_view text) {
  if (text == "intercept") return intercept();
  if (text == "identity") return identity();
  auto inner = [&](std::string_view prefix) -> std::optional<std::string_view> {
    if (text.substr(0, prefix.size()) != prefix || text.back() != ')') return std::nullopt;
    return text.substr(prefix.size(), text.size() - prefix.size() - 1);
  };
  if (auto body = inner("spline(")) {
    const auto semi = body->find(';');
    const auto knot_text = std::string(body->substr(0, semi));
    std::size_t knots = 0;
    try {
      knots = std::stoul(knot_text);
    } catch (const std::exception&) {
      throw ConfigError("bad knot count in featurization '" + std::string(text) + "'");
    }
    Featurization f = spline(knots);
    if (semi != std::string_view::npos) f.indices = parse_indices(body->substr(semi + 1));
    return f;
  }
  if (auto body = inner("subset(")) return subset(parse_indices(*body));
  throw ConfigError("unknown featurization '" + std::string(text) + "'");
}

FeatureMap::FeatureMap(const Featurization& f, const RowMatrix& training) : f_(f) {
  const auto dim = static_cast<std::size_t>(training.cols());
  if (f.kind == Featurization::Kind::identity) {
    for (std::size_t j = 0; j < dim; ++j) columns_used_.push_back(j);
  } else if (f.indices.empty() && f.kind == Featurization::Kind::spline) {
    for (std::size_t j = 0; j < dim; ++j) columns_used_.push_back(j);
  } else {
    columns_used_ = f.indices;
  }
  for (std::size_t j : columns_used_) {
    if (j >= dim) {
      throw ConfigError("featurization " + f.label() + " references covariate " +
                        std::to_string(j) + " but data has " + std::to_string(dim));
    }
  }
  if (f.kind == Featurization::Kind::spline) {
    for (std::size_t j : columns_used_) {
      const Eigen::VectorXd col = training.col(static_cast<Eigen::Index>(j));
      splines_.emplace_back(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())),
                            f.knots);
    }
  }
  const Eigen::MatrixXd z = raw(training);
  const auto n = static_cast<double>(z.rows());
  mean_.resize(static_cast<std::size_t>(z.cols()));
  scale_.resize(mean_.size());
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    const double m = z.col(c).mean();
    const double var = (z.col(c).array() - m).square().sum() / std::max(1.0, n);
    mean_[static_cast<std::size_t>(c)] = m;
    scale_[static_cast<std::size_t>(c)] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
}

Eigen::MatrixXd FeatureMap::raw(const RowMatrix& x) const {
  const Eigen::Index n = x.rows();
  if (f_.kind != Featurization::Kind::spline) {
    Eigen::MatrixXd out(n, static_cast<Eigen::Index>(columns_used_.size()));
    for (std::size_t k = 0; k < columns_used_.size(); ++k) {
      out.col(static_cast<Eigen::Index>(k)) = x.col(static_cast<Eigen::Index>(columns_used_[k]));
    }
    return out;
  }
  const std::size_t per = f_.knots;
  Eigen::MatrixXd out(n, static_cast<Eigen::Index>(per * columns_used_.size()));
  std::vector<double> row(per);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < columns_used_.size(); ++k) {
      splines_[k].evaluate(x(i, static_cast<Eigen::Index>(columns_used_[k])), row);
      for (std::size_t j = 0; j < per; ++j) {
        out(i, static_cast<Eigen::Index>(k * per + j)) = row[j];
      }
    }
  }
  return out;
}

Eigen::MatrixXd FeatureMap::transform(const RowMatrix& x) const {
  const Eigen::MatrixXd z = raw(x);
  Eigen::MatrixXd out(z.rows(), z.cols() + 1);
  out.col(0).setOnes();
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    const auto k = static_cast<std::size_t>(c);
    out.col(c + 1) = (z.col(c).array() - mean_[k]) / scale_[k];
  }
  return out;
}

}  // namespace adapt
