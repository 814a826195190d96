#include "adapt/baselines.hpp"

#include <algorithm>
#include <numeric>

#include "adapt/core.hpp"

namespace adapt {

namespace {

void check_inputs(std::span<const double> p, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("p-values must lie in [0, 1]");
  }
}

BaselineResult step_up(std::string method, std::span<const double> p, double level) {
  BaselineResult out{std::move(method), {}, 0.0};
  const std::size_t n = p.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::size_t k = 0;
  for (std::size_t j = n; j > 0; --j) {
    if (p[order[j - 1]] <= static_cast<double>(j) * level / static_cast<double>(n)) {
      k = j;
      break;
    }
  }
  if (k == 0) return out;
  out.threshold = p[order[k - 1]];
  for (std::size_t i = 0; i < n; ++i) {
    if (p[i] <= out.threshold) out.rejections.push_back(i);
  }
  return out;
}

}  // namespace

BaselineResult bh(std::span<const double> pvalues, double alpha) {
  check_inputs(pvalues, alpha);
  return step_up("bh", pvalues, alpha);
}

double storey_pi0(std::span<const double> pvalues, double lambda) {
  if (!(lambda > 0.0 && lambda < 1.0)) throw ConfigError("Storey lambda must lie in (0, 1)");
  if (pvalues.empty()) return 1.0;
  const auto above = std::count_if(pvalues.begin(), pvalues.end(), [&](double v) { return v > lambda; });
  const double pi0 = (1.0 + static_cast<double>(above)) /
                     (static_cast<double>(pvalues.size()) * (1.0 - lambda));
  return std::min(pi0, 1.0);
}

BaselineResult storey_bh(std::span<const double> pvalues, double alpha, double lambda) {
  check_inputs(pvalues, alpha);
  return step_up("storey_bh", pvalues, alpha / storey_pi0(pvalues, lambda));
}

BaselineResult barber_candes(std::span<const double> pvalues, double alpha, double s_max) {
  check_inputs(pvalues, alpha);
  BaselineResult out{"barber_candes", {}, 0.0};
  const std::size_t n = pvalues.size();
  // (mirror value, is large side), scanned from the largest mirror value down.
  std::vector<std::pair<double, bool>> items;
  items.reserve(n);
  for (double p : pvalues) {
    const double m = std::min(p, 1.0 - p);
    if (m <= s_max) items.emplace_back(m, p >= 0.5);
  }
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::size_t A = 0;
  std::size_t R = 0;
  for (const auto& it : items) (it.second ? A : R)++;
  std::size_t j = 0;
  while (j < items.size()) {
    const double s = items[j].first;
    if (compute_fdp_hat(A, R) <= alpha) {
      out.threshold = s;
      for (std::size_t i = 0; i < n; ++i) {
        if (pvalues[i] < 0.5 && pvalues[i] <= s) out.rejections.push_back(i);
      }
      return out;
    }
    while (j < items.size() && items[j].first == s) {
      (items[j].second ? A : R)--;
      ++j;
    }
  }
  return out;
}

}  // namespace adapt
