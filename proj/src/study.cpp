#include "adapt/study.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "adapt/baselines.hpp"

namespace adapt {

Method parse_method(std::string_view name) {
  if (name == "adapt") return Method::adapt;
  if (name == "bh") return Method::bh;
  if (name == "storey" || name == "storey_bh") return Method::storey;
  if (name == "bc" || name == "barber_candes") return Method::bc;
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

std::string_view method_name(Method m) {
  switch (m) {
    case Method::adapt:
      return "adapt";
    case Method::bh:
      return "bh";
    case Method::storey:
      return "storey";
    case Method::bc:
      return "bc";
  }
  return "adapt";
}

Scenario Scenario::parse(std::string_view name) {
  Scenario s;
  if (name == "example2") {
    s.kind = Kind::example2;
    return s;
  }
  constexpr std::string_view prefix = "example1-";
  if (name.substr(0, prefix.size()) != prefix) throw ConfigError("unknown scenario '" + std::string(name) + "'");
  s.kind = Kind::example1;
  s.region = parse_region(name.substr(prefix.size()));
  return s;
}

std::string Scenario::name() const {
  if (kind == Kind::example2) return "example2";
  const std::string_view r = region == Region::empty ? "null" : region_name(region);
  return "example1-" + std::string(r);
}

HypothesisSet Scenario::generate(std::uint64_t seed) const {
  if (kind == Kind::example2) return generate_example2(example2, seed).data;
  return generate_example1(region, seed, grid, signal);
}

EngineConfig Scenario::default_engine() const {
  EngineConfig c;
  if (kind == Kind::example1) {
    c.candidates = {FeaturizationPair::parse("spline(5)")};
  } else {
    c.candidates = {FeaturizationPair::parse("identity")};
    c.fitter.penalty = Penalty::lasso;
  }
  return c;
}

std::pair<double, double> mean_se(const std::vector<double>& v) {
  if (v.empty()) return {std::nan(""), std::nan("")};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return {m, sd / std::sqrt(static_cast<double>(v.size()))};
}

std::vector<std::vector<std::size_t>> method_rejections(Method m, const HypothesisSet& h,
                                                        const std::vector<double>& alphas,
                                                        const EngineConfig& engine,
                                                        std::vector<std::string>* warnings) {
  std::vector<std::vector<std::size_t>> out;
  const std::vector<double> p = h.pvalues();
  if (m == Method::adapt) {
    const AdaptResult r = run_adapt(h, engine);
    if (warnings) warnings->insert(warnings->end(), r.warnings.begin(), r.warnings.end());
    for (double a : alphas) out.push_back(rejections_at(r.qvalues, a));
    return out;
  }
  for (double a : alphas) {
    switch (m) {
      case Method::bh:
        out.push_back(bh(p, a).rejections);
        break;
      case Method::storey:
        out.push_back(storey_bh(p, a).rejections);
        break;
      case Method::bc:
        out.push_back(barber_candes(p, a).rejections);
        break;
      case Method::adapt:
        break;
    }
  }
  return out;
}

StudyResult run_study(const StudyConfig& config) {
  if (config.reps == 0) throw ConfigError("reps must be at least 1");
  if (config.methods.empty()) throw ConfigError("no methods selected");
  if (config.alphas.empty()) throw ConfigError("no target levels given");
  for (double a : config.alphas) {
    if (!(a > 0.0 && a <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
  }
  config.engine.validate();

  StudyResult result;
  result.replicates.resize(config.reps);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&]() {
    while (true) {
      const std::size_t r = next.fetch_add(1);
      if (r >= config.reps) return;
      try {
        const std::uint64_t seed = config.seed + r;
        const HypothesisSet h = config.scenario.generate(seed);
        EngineConfig engine = config.engine;
        engine.seed = seed;
        ReplicateScores rep;
        for (Method m : config.methods) {
          const auto sets = method_rejections(m, h, config.alphas, engine, &rep.warnings);
          std::vector<Score> row;
          for (const auto& s : sets) row.push_back(score(s, *h.truth()));
          rep.scores.push_back(std::move(row));
        }
        result.replicates[r] = std::move(rep);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(config.reps);
      }
    }
  };

  std::size_t workers = config.workers ? config.workers : std::max(1U, std::thread::hardware_concurrency());
  workers = std::min(workers, config.reps);
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  for (std::size_t mi = 0; mi < config.methods.size(); ++mi) {
    for (std::size_t ai = 0; ai < config.alphas.size(); ++ai) {
      std::vector<double> fdp;
      std::vector<double> power;
      for (const auto& rep : result.replicates) {
        const Score& s = rep.scores[mi][ai];
        fdp.push_back(s.fdp);
        if (s.power) power.push_back(*s.power);
      }
      StudyRow row;
      row.method = config.methods[mi];
      row.alpha = config.alphas[ai];
      row.reps = config.reps;
      std::tie(row.mean_fdp, row.se_fdp) = mean_se(fdp);
      if (!power.empty()) {
        const auto [m, se] = mean_se(power);
        row.mean_power = m;
        row.se_power = se;
      }
      result.rows.push_back(row);
    }
  }
  return result;
}

}  // namespace adapt
