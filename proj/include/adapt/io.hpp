#pragma once

// File formats: CSV input, run configuration, per-hypothesis results, and the
// diagnostics document.

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "adapt/engine.hpp"
#include "adapt/study.hpp"

namespace adapt {

inline constexpr int kSchemaVersion = 1;

struct ColumnMapping {
  std::string p = "p";
  /// Empty: every other numeric column except `truth`.
  std::vector<std::string> covariates;
  std::optional<std::string> truth;

  friend bool operator==(const ColumnMapping&, const ColumnMapping&) = default;
};

struct Dataset {
  HypothesisSet data;
  std::vector<std::string> covariate_names;
};

/// Header row required; errors name the offending line.
Dataset read_csv(std::istream& in, const ColumnMapping& columns);
Dataset read_csv_file(const std::string& path, const ColumnMapping& columns);

struct RunConfig {
  std::optional<std::string> input;
  std::optional<Scenario> scenario;
  /// Data seed for scenarios; also the engine seed.
  std::uint64_t seed = 0;
  ColumnMapping columns;
  std::vector<double> alphas{0.1};
  EngineConfig engine;
  std::string results = "results.csv";
  std::string diagnostics = "diagnostics.json";
  std::string table = "simulation.csv";
  std::vector<Method> methods{Method::adapt, Method::bh, Method::storey, Method::bc};
  std::size_t reps = 1;
  std::size_t workers = 0;

  void validate() const;
};

nlohmann::json to_json(const EngineConfig& c);
EngineConfig engine_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig read_run_config(const std::string& path);

/// Parses "lo:hi:step" into an inclusive grid, e.g. "0.01:0.3:0.01".
std::vector<double> parse_alpha_grid(std::string_view text);

/// Shortest round-trip decimal form.
std::string format_double(double v);

struct AlphaStop {
  double alpha = 0.0;
  std::optional<std::size_t> step;
  std::vector<std::size_t> rejections;
  std::optional<ThresholdSurface> surface;
};

void write_results_csv(std::ostream& out, const Dataset& data, const AdaptResult& result,
                       const std::vector<AlphaStop>& stops);

nlohmann::json fit_summary(const TwoGroupsFit& fit);
nlohmann::json trace_json(const ProtocolTrace& trace);

nlohmann::json diagnostics_json(const RunConfig& config, const Dataset& data, const AdaptResult& result,
                                const std::vector<AlphaStop>& stops,
                                const std::vector<InfoLossPoint>& info_loss);

void write_study_csv(std::ostream& out, const StudyResult& study);

}  // namespace adapt
