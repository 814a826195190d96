#include "adapt/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

namespace adapt {

using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  s = s.substr(a, b - a);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return std::string(s);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') quoted = !quoted;
    if (ch == ',' && !quoted) {
      out.push_back(trim(field));
      field.clear();
    } else {
      field += ch;
    }
  }
  out.push_back(trim(field));
  return out;
}

std::optional<double> parse_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<bool> parse_bool(const std::string& s) {
  if (s == "1" || s == "true" || s == "TRUE" || s == "True") return true;
  if (s == "0" || s == "false" || s == "FALSE" || s == "False") return false;
  return std::nullopt;
}

std::string where(std::size_t line) { return "line " + std::to_string(line) + ": "; }

}  // namespace

Dataset read_csv(std::istream& in, const ColumnMapping& columns) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line[0] == '#') continue;
    header = split(line);
    break;
  }
  if (header.empty()) throw DataError("input has no header row");

  auto find = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t p_col = find(columns.p);
  const std::optional<std::size_t> truth_col =
      columns.truth ? std::optional<std::size_t>(find(*columns.truth)) : std::nullopt;

  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> row_line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line[0] == '#') continue;
    auto fields = split(line);
    if (fields.size() != header.size()) {
      throw DataError(where(line_no) + "expected " + std::to_string(header.size()) + " fields, found " +
                      std::to_string(fields.size()));
    }
    rows.push_back(std::move(fields));
    row_line.push_back(line_no);
  }
  if (rows.empty()) throw DataError("input has no data rows");

  std::vector<std::size_t> cov_cols;
  if (!columns.covariates.empty()) {
    for (const auto& name : columns.covariates) cov_cols.push_back(find(name));
  } else {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c == p_col || (truth_col && c == *truth_col)) continue;
      const bool numeric = std::all_of(rows.begin(), rows.end(),
                                       [&](const auto& r) { return parse_number(r[c]).has_value(); });
      if (numeric) cov_cols.push_back(c);
    }
  }

  const std::size_t n = rows.size();
  std::vector<double> p(n);
  RowMatrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cov_cols.size()));
  std::optional<std::vector<bool>> truth;
  if (truth_col) truth.emplace(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = rows[i];
    const auto pv = parse_number(r[p_col]);
    if (!pv || !std::isfinite(*pv)) throw DataError(where(row_line[i]) + "p-value '" + r[p_col] + "' is not a number");
    if (*pv < 0.0 || *pv > 1.0) throw DataError(where(row_line[i]) + "p-value " + r[p_col] + " outside [0, 1]");
    p[i] = *pv;
    for (std::size_t j = 0; j < cov_cols.size(); ++j) {
      const auto v = parse_number(r[cov_cols[j]]);
      if (!v || !std::isfinite(*v)) {
        throw DataError(where(row_line[i]) + "column '" + header[cov_cols[j]] + "' value '" + r[cov_cols[j]] +
                        "' is not a finite number");
      }
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = *v;
    }
    if (truth_col) {
      const auto t = parse_bool(r[*truth_col]);
      if (!t) throw DataError(where(row_line[i]) + "truth value '" + r[*truth_col] + "' is not 0/1");
      (*truth)[i] = *t;
    }
  }
  Dataset out;
  for (std::size_t c : cov_cols) out.covariate_names.push_back(header[c]);
  out.data = HypothesisSet::ingest(p, std::move(x), std::move(truth));
  return out;
}

Dataset read_csv_file(const std::string& path, const ColumnMapping& columns) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_csv(in, columns);
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::vector<double> parse_alpha_grid(std::string_view text) {
  std::vector<double> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t colon = text.find(':', start);
    const auto v = parse_number(trim(text.substr(start, colon == std::string_view::npos ? colon : colon - start)));
    if (!v) throw ConfigError("alpha grid must look like lo:hi:step");
    parts.push_back(*v);
    if (colon == std::string_view::npos) break;
    start = colon + 1;
  }
  if (parts.size() != 3) throw ConfigError("alpha grid must look like lo:hi:step");
  const double lo = parts[0];
  const double hi = parts[1];
  const double step = parts[2];
  if (!(step > 0.0) || !(lo > 0.0) || !(hi >= lo) || hi > 1.0) throw ConfigError("invalid alpha grid");
  std::vector<double> out;
  const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  for (std::size_t k = 0; k < count; ++k) {
    // Round to the step's decimal precision so 0.01 * 7 prints as 0.07.
    const double v = lo + static_cast<double>(k) * step;
    out.push_back(std::round(v * 1e12) / 1e12);
  }
  return out;
}

void RunConfig::validate() const {
  if (input && scenario) throw ConfigError("give either an input file or a scenario, not both");
  for (double a : alphas) {
    if (!(a > 0.0 && a <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
  }
  if (reps == 0) throw ConfigError("reps must be at least 1");
  if (methods.empty()) throw ConfigError("no methods selected");
  engine.validate();
}

namespace {

json tolerance_json(double t) { return std::isfinite(t) ? json(t) : json("inf"); }

double tolerance_from(const json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
    throw ConfigError("tolerance must be a number or \"inf\"");
  }
  return j.get<double>();
}

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
      throw ConfigError("unknown key '" + std::string(where) + "." + k + "'");
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("key '") + key + "': " + e.what());
  }
}

}  // namespace

json to_json(const EngineConfig& c) {
  json j;
  j["family"] = family_name(c.family);
  j["candidates"] = json::array();
  for (const auto& pair : c.candidates) j["candidates"].push_back(pair.label());
  j["criterion"] = c.criterion.label();
  j["s0"] = c.s0;
  j["refit_every"] = c.refit_every;
  j["em"] = {{"iterations", c.em.iterations}, {"tolerance", tolerance_json(c.em.tolerance)}};
  j["mu_weighted"] = c.fitter.weighted_mu;
  j["mu_link"] = c.fitter.mu_link ? json(link_name(*c.fitter.mu_link)) : json(nullptr);
  j["penalty"] = c.fitter.penalty == Penalty::lasso ? "lasso" : "none";
  j["lasso"] = {{"folds", c.fitter.lasso.cv_folds},
                {"path_length", c.fitter.lasso.path_length},
                {"min_ratio", c.fitter.lasso.min_ratio},
                {"cv_once", c.fitter.lasso_cv_once}};
  j["strategy"] = strategy_name(c.strategy);
  j["seed"] = c.seed;
  return j;
}

EngineConfig engine_config_from_json(const json& j) {
  check_keys(j, {"family", "candidates", "criterion", "s0", "refit_every", "em", "mu_weighted", "mu_link",
                 "penalty", "lasso", "strategy", "seed"},
             "engine");
  EngineConfig c;
  c.family = parse_family(get_or<std::string>(j, "family", std::string(family_name(c.family))));
  if (j.contains("candidates")) {
    c.candidates.clear();
    for (const auto& s : j.at("candidates")) c.candidates.push_back(FeaturizationPair::parse(s.get<std::string>()));
  }
  c.criterion = SelectionCriterion::parse(get_or<std::string>(j, "criterion", c.criterion.label()));
  c.s0 = get_or(j, "s0", c.s0);
  c.refit_every = get_or(j, "refit_every", c.refit_every);
  if (j.contains("em")) {
    const json& em = j.at("em");
    check_keys(em, {"iterations", "tolerance"}, "engine.em");
    c.em.iterations = get_or(em, "iterations", c.em.iterations);
    if (em.contains("tolerance")) c.em.tolerance = tolerance_from(em.at("tolerance"));
  }
  c.fitter.weighted_mu = get_or(j, "mu_weighted", c.fitter.weighted_mu);
  if (j.contains("mu_link") && !j.at("mu_link").is_null()) c.fitter.mu_link = parse_link(j.at("mu_link").get<std::string>());
  const std::string penalty = get_or<std::string>(j, "penalty", "none");
  if (penalty == "lasso") {
    c.fitter.penalty = Penalty::lasso;
  } else if (penalty != "none") {
    throw ConfigError("unknown penalty '" + penalty + "'");
  }
  if (j.contains("lasso")) {
    const json& l = j.at("lasso");
    check_keys(l, {"folds", "path_length", "min_ratio", "cv_once"}, "engine.lasso");
    c.fitter.lasso.cv_folds = get_or(l, "folds", c.fitter.lasso.cv_folds);
    c.fitter.lasso.path_length = get_or(l, "path_length", c.fitter.lasso.path_length);
    c.fitter.lasso.min_ratio = get_or(l, "min_ratio", c.fitter.lasso.min_ratio);
    c.fitter.lasso_cv_once = get_or(l, "cv_once", c.fitter.lasso_cv_once);
  }
  c.strategy = parse_strategy(get_or<std::string>(j, "strategy", std::string(strategy_name(c.strategy))));
  c.seed = get_or(j, "seed", c.seed);
  return c;
}

json to_json(const RunConfig& c) {
  json j;
  j["schema"] = kSchemaVersion;
  j["input"] = c.input ? json(*c.input) : json(nullptr);
  if (c.scenario) {
    const Scenario& s = *c.scenario;
    j["scenario"] = {{"name", s.name()},
                     {"grid", s.grid},
                     {"signal", s.signal},
                     {"example2",
                      {{"n", s.example2.n},
                       {"d", s.example2.d},
                       {"target_pi", s.example2.target_pi},
                       {"theta", s.example2.theta},
                       {"beta", s.example2.beta}}}};
  } else {
    j["scenario"] = nullptr;
  }
  j["seed"] = c.seed;
  j["columns"] = {{"p", c.columns.p},
                  {"covariates", c.columns.covariates},
                  {"truth", c.columns.truth ? json(*c.columns.truth) : json(nullptr)}};
  j["alphas"] = c.alphas;
  j["engine"] = to_json(c.engine);
  j["output"] = {{"results", c.results}, {"diagnostics", c.diagnostics}, {"table", c.table}};
  json methods = json::array();
  for (Method m : c.methods) methods.push_back(method_name(m));
  j["simulate"] = {{"methods", methods}, {"reps", c.reps}, {"workers", c.workers}};
  return j;
}

RunConfig run_config_from_json(const json& j) {
  check_keys(j, {"schema", "input", "scenario", "seed", "columns", "alphas", "engine", "output", "simulate"},
             "config");
  if (get_or(j, "schema", kSchemaVersion) != kSchemaVersion) throw ConfigError("unsupported config schema");
  RunConfig c;
  if (j.contains("input") && !j.at("input").is_null()) c.input = j.at("input").get<std::string>();
  if (j.contains("scenario") && !j.at("scenario").is_null()) {
    const json& s = j.at("scenario");
    check_keys(s, {"name", "grid", "signal", "example2"}, "scenario");
    Scenario sc = Scenario::parse(get_or<std::string>(s, "name", "example1-circle"));
    sc.grid = get_or(s, "grid", sc.grid);
    sc.signal = get_or(s, "signal", sc.signal);
    if (s.contains("example2")) {
      const json& e = s.at("example2");
      check_keys(e, {"n", "d", "target_pi", "theta", "beta"}, "scenario.example2");
      sc.example2.n = get_or(e, "n", sc.example2.n);
      sc.example2.d = get_or(e, "d", sc.example2.d);
      sc.example2.target_pi = get_or(e, "target_pi", sc.example2.target_pi);
      sc.example2.theta = get_or(e, "theta", sc.example2.theta);
      sc.example2.beta = get_or(e, "beta", sc.example2.beta);
    }
    c.scenario = sc;
  }
  c.seed = get_or(j, "seed", c.seed);
  if (j.contains("columns")) {
    const json& col = j.at("columns");
    check_keys(col, {"p", "covariates", "truth"}, "columns");
    c.columns.p = get_or<std::string>(col, "p", c.columns.p);
    c.columns.covariates = get_or(col, "covariates", c.columns.covariates);
    if (col.contains("truth") && !col.at("truth").is_null()) c.columns.truth = col.at("truth").get<std::string>();
  }
  c.alphas = get_or(j, "alphas", c.alphas);
  if (j.contains("engine")) {
    c.engine = engine_config_from_json(j.at("engine"));
  } else if (c.scenario) {
    c.engine = c.scenario->default_engine();
  }
  if (j.contains("output")) {
    const json& o = j.at("output");
    check_keys(o, {"results", "diagnostics", "table"}, "output");
    c.results = get_or(o, "results", c.results);
    c.diagnostics = get_or(o, "diagnostics", c.diagnostics);
    c.table = get_or(o, "table", c.table);
  }
  if (j.contains("simulate")) {
    const json& s = j.at("simulate");
    check_keys(s, {"methods", "reps", "workers"}, "simulate");
    if (s.contains("methods")) {
      c.methods.clear();
      for (const auto& m : s.at("methods")) c.methods.push_back(parse_method(m.get<std::string>()));
    }
    c.reps = get_or(s, "reps", c.reps);
    c.workers = get_or(s, "workers", c.workers);
  }
  c.validate();
  return c;
}

RunConfig read_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return run_config_from_json(j);
}

void write_results_csv(std::ostream& out, const Dataset& data, const AdaptResult& result,
                       const std::vector<AlphaStop>& stops) {
  const HypothesisSet& h = data.data;
  out << "# schema: " << kSchemaVersion << "\n";
  out << "index";
  for (const auto& name : data.covariate_names) out << "," << name;
  out << ",p,q_value";
  for (const auto& s : stops) out << ",rejected@" << format_double(s.alpha);
  out << ",lfdr_final\n";
  std::vector<std::vector<std::uint8_t>> rejected;
  for (const auto& s : stops) {
    std::vector<std::uint8_t> flag(h.size(), 0);
    for (std::size_t i : s.rejections) flag[i] = 1;
    rejected.push_back(std::move(flag));
  }
  for (std::size_t i = 0; i < h.size(); ++i) {
    out << i;
    for (Eigen::Index j = 0; j < h.covariates().cols(); ++j)
      out << "," << format_double(h.covariates()(static_cast<Eigen::Index>(i), j));
    out << "," << format_double(h.pvalue(i));
    out << "," << (result.qvalues.empty() ? std::string() : format_double(result.qvalues[i]));
    for (const auto& flag : rejected) out << "," << static_cast<int>(flag[i]);
    out << "," << (result.lfdr.empty() ? std::string() : format_double(result.lfdr[i])) << "\n";
  }
}

json fit_summary(const TwoGroupsFit& fit) {
  json j;
  j["family"] = fit.family.name();
  j["theta"] = std::vector<double>(fit.theta.data(), fit.theta.data() + fit.theta.size());
  j["beta"] = std::vector<double>(fit.beta.data(), fit.beta.data() + fit.beta.size());
  j["mu_link"] = link_name(fit.mu_spec.link);
  j["expected_loglik"] = fit.expected_loglik;
  j["mu_clamped"] = fit.mu_clamped;
  j["lambda_pi"] = fit.lambda_pi ? json(*fit.lambda_pi) : json(nullptr);
  j["lambda_mu"] = fit.lambda_mu ? json(*fit.lambda_mu) : json(nullptr);
  double pi_mean = 0.0;
  for (double v : fit.pi1) pi_mean += v;
  j["mean_pi1"] = fit.pi1.empty() ? 0.0 : pi_mean / static_cast<double>(fit.pi1.size());
  return j;
}

json trace_json(const ProtocolTrace& trace) {
  json steps = json::array();
  for (const auto& st : trace.steps) {
    steps.push_back({{"t", st.t},
                     {"A", st.A},
                     {"R", st.R},
                     {"fdp_hat", st.fdp_hat},
                     {"revealed", st.revealed},
                     {"refit", st.refit}});
  }
  return steps;
}

json diagnostics_json(const RunConfig& config, const Dataset& data, const AdaptResult& result,
                      const std::vector<AlphaStop>& stops, const std::vector<InfoLossPoint>& info_loss) {
  json j;
  j["schema"] = kSchemaVersion;
  j["config"] = to_json(config);
  j["n"] = data.data.size();
  j["covariates"] = data.covariate_names;
  j["features"] = result.features.label();
  json table = json::array();
  for (const auto& c : result.selection) {
    table.push_back({{"label", c.label},
                     {"df_pi", c.df_pi},
                     {"df_mu", c.df_mu},
                     {"loglik", c.failed ? json(nullptr) : json(c.loglik)},
                     {"score", c.failed ? json(nullptr) : json(c.score)},
                     {"failed", c.failed},
                     {"error", c.error}});
  }
  j["selection"] = table;
  j["trace"] = trace_json(result.trace);
  json fits = json::array();
  for (const auto& f : result.fits) {
    json s = fit_summary(f.fit);
    s["step"] = f.step;
    fits.push_back(std::move(s));
  }
  j["fits"] = fits;
  j["final_fit"] = result.final_fit ? fit_summary(*result.final_fit) : json(nullptr);
  json levels = json::array();
  for (const auto& s : stops) {
    levels.push_back({{"alpha", s.alpha},
                      {"step", s.step ? json(*s.step) : json(nullptr)},
                      {"rejections", s.rejections.size()},
                      {"thresholds", s.surface ? json(s.surface->values()) : json(nullptr)}});
  }
  j["levels"] = levels;
  json loss = json::array();
  for (const auto& pt : info_loss) {
    loss.push_back({{"alpha", pt.alpha},
                    {"step", pt.step ? json(*pt.step) : json(nullptr)},
                    {"correlation", pt.correlation ? json(*pt.correlation) : json(nullptr)}});
  }
  j["info_loss"] = loss;
  j["warnings"] = result.warnings;
  return j;
}

void write_study_csv(std::ostream& out, const StudyResult& study) {
  out << "# schema: " << kSchemaVersion << "\n";
  out << "method,alpha,reps,mean_fdp,se_fdp,mean_power,se_power\n";
  for (const auto& r : study.rows) {
    out << method_name(r.method) << "," << format_double(r.alpha) << "," << r.reps << ","
        << format_double(r.mean_fdp) << "," << format_double(r.se_fdp) << ","
        << (r.mean_power ? format_double(*r.mean_power) : std::string()) << ","
        << (r.se_power ? format_double(*r.se_power) : std::string()) << "\n";
  }
}

}  // namespace adapt
