#pragma once

// Replicated simulation studies: named scenarios, methods, and the FDR/power
// table averaged over replicates.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adapt/engine.hpp"
#include "adapt/sim.hpp"

namespace adapt {

enum class Method { adapt, bh, storey, bc };

Method parse_method(std::string_view name);
std::string_view method_name(Method m);

struct Scenario {
  enum class Kind { example1, example2 };
  Kind kind = Kind::example1;
  Region region = Region::circle;
  std::size_t grid = 50;
  double signal = 2.0;
  Example2Params example2{};

  /// "example1-circle", "example1-ellipse", "example1-ring", "example1-null", "example2".
  static Scenario parse(std::string_view name);
  std::string name() const;
  HypothesisSet generate(std::uint64_t seed) const;
  /// Engine settings used for the scenario when none are given.
  EngineConfig default_engine() const;
};

struct StudyConfig {
  Scenario scenario;
  std::vector<Method> methods{Method::adapt, Method::bh, Method::storey, Method::bc};
  std::vector<double> alphas{0.1};
  std::size_t reps = 1;
  /// Replicate r uses data seed `seed + r`.
  std::uint64_t seed = 0;
  EngineConfig engine;
  /// 0 means one worker per hardware thread.
  std::size_t workers = 0;
};

/// Scores of one replicate, indexed [method][alpha].
struct ReplicateScores {
  std::vector<std::vector<Score>> scores;
  std::vector<std::string> warnings;
};

struct StudyRow {
  Method method = Method::adapt;
  double alpha = 0.0;
  double mean_fdp = 0.0;
  double se_fdp = 0.0;
  /// Missing when no replicate had a non-null.
  std::optional<double> mean_power;
  std::optional<double> se_power;
  std::size_t reps = 0;
};

struct StudyResult {
  std::vector<StudyRow> rows;
  std::vector<ReplicateScores> replicates;
};

/// Rejection sets per alpha for one method on one dataset. AdaPT runs once to
/// full unmasking and reads every level off the q-values.
std::vector<std::vector<std::size_t>> method_rejections(Method m, const HypothesisSet& h,
                                                        const std::vector<double>& alphas,
                                                        const EngineConfig& engine,
                                                        std::vector<std::string>* warnings = nullptr);

StudyResult run_study(const StudyConfig& config);

/// Mean and standard error of the mean (0 for a single value).
std::pair<double, double> mean_se(const std::vector<double>& v);

}  // namespace adapt
