#include "adapt/cli.hpp"

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "adapt/baselines.hpp"
#include "adapt/io.hpp"
#include "adapt/service.hpp"

namespace adapt {

using nlohmann::json;

namespace {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flags that override the config file. Each is applied only when given.
struct Overrides {
  std::string config;
  std::string input;
  std::string scenario;
  std::uint64_t seed = 0;
  std::vector<double> alphas;
  std::string alpha_grid;
  std::string family;
  std::vector<std::string> candidates;
  std::string criterion;
  double s0 = 0.0;
  std::size_t refit_every = 0;
  std::size_t em_iterations = 0;
  double em_tolerance = 0.0;
  bool weighted_mu = false;
  std::string penalty;
  std::string strategy;
  std::string p_column;
  std::vector<std::string> covariates;
  std::string truth_column;
  std::string results;
  std::string diagnostics;
  std::string table;
  std::string save_config;
  std::size_t reps = 0;
  std::vector<std::string> methods;
  std::size_t workers = 0;

  std::map<std::string, CLI::Option*> opts;

  bool given(const std::string& name) const {
    const auto it = opts.find(name);
    return it != opts.end() && it->second->count() > 0;
  }
};

void add_common(CLI::App* cmd, Overrides& o) {
  o.opts["config"] = cmd->add_option("--config", o.config, "JSON run configuration");
  o.opts["input"] = cmd->add_option("--input", o.input, "CSV with a p-value column");
  o.opts["scenario"] = cmd->add_option("--scenario", o.scenario,
                                       "example1-circle, example1-ellipse, example1-ring, example1-null or example2");
  o.opts["seed"] = cmd->add_option("--seed", o.seed, "data and engine seed");
  o.opts["alpha"] = cmd->add_option("--alpha", o.alphas, "target FDR level(s)");
  o.opts["alpha-grid"] = cmd->add_option("--alpha-grid", o.alpha_grid, "lo:hi:step, e.g. 0.01:0.3:0.01");
  o.opts["p-column"] = cmd->add_option("--p-column", o.p_column, "name of the p-value column");
  o.opts["covariates"] = cmd->add_option("--covariates", o.covariates, "covariate columns (default: all numeric)");
  o.opts["truth-column"] = cmd->add_option("--truth-column", o.truth_column, "0/1 non-null indicator column");
  o.opts["save-config"] = cmd->add_option("--save-config", o.save_config, "write the resolved configuration here");
}

void add_engine(CLI::App* cmd, Overrides& o) {
  o.opts["family"] = cmd->add_option("--family", o.family, "beta or gaussian");
  o.opts["candidate"] = cmd->add_option("--candidate", o.candidates, "featurization, e.g. spline(5) or spline(5)|identity");
  o.opts["criterion"] = cmd->add_option("--criterion", o.criterion, "bic or cv(K)");
  o.opts["s0"] = cmd->add_option("--s0", o.s0, "initial threshold");
  o.opts["refit-every"] = cmd->add_option("--refit-every", o.refit_every, "reveals between refits (0: auto)");
  o.opts["em-iterations"] = cmd->add_option("--em-iterations", o.em_iterations, "EM iterations per fit");
  o.opts["em-tolerance"] = cmd->add_option("--em-tolerance", o.em_tolerance, "EM stopping tolerance");
  o.opts["weighted-mu"] = cmd->add_flag("--weighted-mu", o.weighted_mu, "weight the mu regression by posterior mass");
  o.opts["penalty"] = cmd->add_option("--penalty", o.penalty, "none or lasso");
  o.opts["strategy"] = cmd->add_option("--strategy", o.strategy, "level_surface or constant");
}

void add_study(CLI::App* cmd, Overrides& o) {
  o.opts["reps"] = cmd->add_option("--reps", o.reps, "replicates");
  o.opts["methods"] = cmd->add_option("--methods", o.methods, "adapt, bh, storey, bc");
  o.opts["workers"] = cmd->add_option("--workers", o.workers, "worker threads (0: all cores)");
}

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.given("config") ? read_run_config(o.config) : RunConfig{};
  if (o.given("input")) {
    c.input = o.input;
    c.scenario.reset();
  }
  if (o.given("scenario")) {
    c.scenario = Scenario::parse(o.scenario);
    c.input.reset();
    if (!o.given("config")) c.engine = c.scenario->default_engine();
  }
  if (o.given("seed")) c.seed = o.seed;
  if (o.given("alpha")) c.alphas = o.alphas;
  if (o.given("alpha-grid")) c.alphas = parse_alpha_grid(o.alpha_grid);
  if (o.given("p-column")) c.columns.p = o.p_column;
  if (o.given("covariates")) c.columns.covariates = o.covariates;
  if (o.given("truth-column")) c.columns.truth = o.truth_column;
  if (o.given("family")) c.engine.family = parse_family(o.family);
  if (o.given("candidate")) {
    c.engine.candidates.clear();
    for (const auto& s : o.candidates) c.engine.candidates.push_back(FeaturizationPair::parse(s));
  }
  if (o.given("criterion")) c.engine.criterion = SelectionCriterion::parse(o.criterion);
  if (o.given("s0")) c.engine.s0 = o.s0;
  if (o.given("refit-every")) c.engine.refit_every = o.refit_every;
  if (o.given("em-iterations")) c.engine.em.iterations = o.em_iterations;
  if (o.given("em-tolerance")) c.engine.em.tolerance = o.em_tolerance;
  if (o.given("weighted-mu")) c.engine.fitter.weighted_mu = o.weighted_mu;
  if (o.given("penalty")) {
    if (o.penalty == "lasso") {
      c.engine.fitter.penalty = Penalty::lasso;
    } else if (o.penalty == "none") {
      c.engine.fitter.penalty = Penalty::none;
    } else {
      throw ConfigError("unknown penalty '" + o.penalty + "'");
    }
  }
  if (o.given("strategy")) c.engine.strategy = parse_strategy(o.strategy);
  if (o.given("out")) c.results = o.results;
  if (o.given("diagnostics")) c.diagnostics = o.diagnostics;
  if (o.given("table")) c.table = o.table;
  if (o.given("reps")) c.reps = o.reps;
  if (o.given("methods")) {
    c.methods.clear();
    for (const auto& m : o.methods) c.methods.push_back(parse_method(m));
  }
  if (o.given("workers")) c.workers = o.workers;
  c.engine.seed = c.seed;
  c.validate();
  c.engine.validate();
  if (o.given("save-config")) {
    std::ofstream f(o.save_config);
    f << to_json(c).dump(2) << "\n";
    if (!f) throw IoError("cannot write '" + o.save_config + "'");
  }
  return c;
}

Dataset load(const RunConfig& c) {
  if (c.input) return read_csv_file(*c.input, c.columns);
  if (!c.scenario) throw ConfigError("give --input or --scenario");
  Dataset d;
  d.data = c.scenario->generate(c.seed);
  for (Eigen::Index j = 0; j < d.data.covariates().cols(); ++j) d.covariate_names.push_back("x" + std::to_string(j + 1));
  return d;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write '" + path + "'");
  return f;
}

void finish(std::ofstream& f, const std::string& path) {
  f.flush();
  if (!f) throw IoError("cannot write '" + path + "'");
}

int cmd_run(const RunConfig& c, std::ostream& out) {
  const Dataset d = load(c);
  AdaptEngine engine(d.data, c.engine);
  // Levels are visited from the loosest so one pass serves the whole grid.
  std::vector<std::size_t> order(c.alphas.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return c.alphas[a] > c.alphas[b]; });
  std::vector<AlphaStop> stops(c.alphas.size());
  for (std::size_t k : order) {
    AlphaStop& s = stops[k];
    s.alpha = c.alphas[k];
    if (!engine.run_until(s.alpha)) continue;
    s.step = engine.step_index();
    s.surface = engine.view().surface;
    for (std::size_t i = 0; i < d.data.size(); ++i) {
      if (!engine.view().is_revealed(i) && !d.data.upper(i)) s.rejections.push_back(i);
    }
  }
  const AdaptResult result = engine.finalize(std::nullopt, true);
  const auto info = info_loss_correlation(d.data, result, c.engine, c.alphas);

  auto results = open_out(c.results);
  write_results_csv(results, d, result, stops);
  finish(results, c.results);
  auto diag = open_out(c.diagnostics);
  diag << diagnostics_json(c, d, result, stops, info).dump(2) << "\n";
  finish(diag, c.diagnostics);

  out << "n=" << d.data.size() << " features=" << result.features.label() << "\n";
  for (const auto& s : stops) {
    out << "alpha=" << format_double(s.alpha) << " rejections=" << s.rejections.size();
    if (!s.step) out << " (level not reached)";
    out << "\n";
  }
  for (const auto& w : result.warnings) out << "warning: " << w << "\n";
  return kExitOk;
}

int cmd_simulate(const RunConfig& c, std::ostream& out) {
  if (!c.scenario) throw ConfigError("simulate needs --scenario");
  StudyConfig s;
  s.scenario = *c.scenario;
  s.methods = c.methods;
  s.alphas = c.alphas;
  s.reps = c.reps;
  s.seed = c.seed;
  s.engine = c.engine;
  s.workers = c.workers;
  const StudyResult r = run_study(s);
  auto table = open_out(c.table);
  write_study_csv(table, r);
  finish(table, c.table);
  write_study_csv(out, r);
  return kExitOk;
}

int cmd_baselines(const RunConfig& c, std::ostream& out) {
  const Dataset d = load(c);
  const std::vector<double> p = d.data.pvalues();
  std::vector<std::pair<std::string, std::vector<std::uint8_t>>> columns;
  for (Method m : {Method::bh, Method::storey, Method::bc}) {
    for (double a : c.alphas) {
      std::vector<std::size_t> rej;
      if (m == Method::bh) rej = bh(p, a).rejections;
      if (m == Method::storey) rej = storey_bh(p, a).rejections;
      if (m == Method::bc) rej = barber_candes(p, a).rejections;
      std::vector<std::uint8_t> flag(p.size(), 0);
      for (std::size_t i : rej) flag[i] = 1;
      const std::string name = std::string(method_name(m)) + "@" + format_double(a);
      out << name << " rejections=" << rej.size() << "\n";
      columns.emplace_back(name, std::move(flag));
    }
  }
  auto f = open_out(c.results);
  f << "# schema: " << kSchemaVersion << "\nindex,p";
  for (const auto& col : columns) f << "," << col.first;
  f << "\n";
  for (std::size_t i = 0; i < p.size(); ++i) {
    f << i << "," << format_double(p[i]);
    for (const auto& col : columns) f << "," << static_cast<int>(col.second[i]);
    f << "\n";
  }
  finish(f, c.results);
  return kExitOk;
}

int cmd_serve(const std::string& host, unsigned short port, const std::string& persist_dir, std::size_t threads,
              std::ostream& out) {
  // Block the stop signals before any server thread starts so only sigwait sees them.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  SessionStore store(persist_dir.empty() ? std::nullopt : std::optional<std::filesystem::path>(persist_dir));
  Server server(store, host, port, threads);
  const unsigned short bound = server.start();
  out << "listening on " << host << ":" << bound << std::endl;
  int sig = 0;
  sigwait(&set, &sig);
  server.stop();
  out << "stopped" << std::endl;
  return kExitOk;
}

int cmd_replay(const std::string& path, const std::string& dest, std::ostream& out) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  json persisted;
  try {
    persisted = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError("session file '" + path + "': " + e.what());
  }
  const json r = replay_result(persisted);
  json summary{{"schema", kSchemaVersion},
               {"status", r["state"]["status"]},
               {"step", r["state"]["step"]},
               {"result", r["result"]}};
  if (!dest.empty()) {
    auto f = open_out(dest);
    f << summary.dump(2) << "\n";
    finish(f, dest);
  }
  out << summary.dump() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"AdaPT: adaptive p-value thresholding with covariates", "adapt"};
  app.require_subcommand(1);

  Overrides run_o;
  CLI::App* run = app.add_subcommand("run", "run AdaPT on a CSV or a scenario");
  add_common(run, run_o);
  add_engine(run, run_o);
  run_o.opts["out"] = run->add_option("--out", run_o.results, "per-hypothesis results CSV");
  run_o.opts["diagnostics"] = run->add_option("--diagnostics", run_o.diagnostics, "diagnostics JSON");

  Overrides sim_o;
  CLI::App* sim = app.add_subcommand("simulate", "replicated FDR/power study on a scenario");
  add_common(sim, sim_o);
  add_engine(sim, sim_o);
  add_study(sim, sim_o);
  sim_o.opts["table"] = sim->add_option("--table", sim_o.table, "FDR/power table CSV");

  Overrides base_o;
  CLI::App* base = app.add_subcommand("baselines", "BH, Storey-BH and Barber-Candes rejections");
  add_common(base, base_o);
  base_o.opts["out"] = base->add_option("--out", base_o.results, "rejection flags CSV");

  std::string host = "127.0.0.1";
  unsigned short port = 8080;
  std::string persist_dir;
  std::size_t threads = 2;
  CLI::App* serve = app.add_subcommand("serve", "interactive session server (HTTP + WebSocket)");
  serve->add_option("--host", host, "listen address");
  serve->add_option("--port", port, "listen port (0: any free port)");
  serve->add_option("--persist-dir", persist_dir, "directory for session files");
  serve->add_option("--threads", threads, "I/O threads");

  std::string session_file;
  std::string replay_out;
  CLI::App* replay = app.add_subcommand("replay", "rebuild a persisted session from its action log");
  replay->add_option("session", session_file, "session JSON file")->required();
  replay->add_option("--out", replay_out, "write the replayed result here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (run->parsed()) return cmd_run(resolve(run_o), out);
    if (sim->parsed()) return cmd_simulate(resolve(sim_o), out);
    if (base->parsed()) return cmd_baselines(resolve(base_o), out);
    if (serve->parsed()) return cmd_serve(host, port, persist_dir, threads, out);
    if (replay->parsed()) return cmd_replay(session_file, replay_out, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ServiceError& e) {
    err << "error: " << e.what() << "\n";
    return e.status() >= 500 ? kExitInternal : kExitData;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace adapt
