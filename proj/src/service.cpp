#include "adapt/service.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "adapt/io.hpp"

namespace adapt {

using nlohmann::json;

namespace {

[[noreturn]] void bad_request(const std::string& msg) { throw ServiceError(400, msg); }

void require_schema(const json& body, const std::string& where) {
  if (!body.is_object()) bad_request(where + ": body must be a JSON object");
  const auto it = body.find("schema");
  if (it == body.end()) bad_request(where + ".schema: required");
  if (!it->is_number_integer() || it->get<int>() != kSchemaVersion)
    bad_request(where + ".schema: unsupported version (expected " + std::to_string(kSchemaVersion) + ")");
}

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

SessionPayload parse_session_payload(const json& body) {
  require_schema(body, "payload");
  for (const auto& [k, v] : body.items()) {
    if (k != "schema" && k != "pvalues" && k != "covariates" && k != "config")
      bad_request("payload." + k + ": unknown field");
  }
  const auto pit = body.find("pvalues");
  if (pit == body.end() || !pit->is_array()) bad_request("pvalues: required array");
  const std::size_t n = pit->size();
  if (n == 0) bad_request("pvalues: must not be empty");
  if (n > kMaxHypotheses)
    throw ServiceError(413, "pvalues: at most " + std::to_string(kMaxHypotheses) + " hypotheses");
  std::vector<double> p(n);
  for (std::size_t i = 0; i < n; ++i) {
    const json& v = (*pit)[i];
    if (!v.is_number() || !(v.get<double>() >= 0.0 && v.get<double>() <= 1.0))
      bad_request("pvalues[" + std::to_string(i) + "]: must be a number in [0, 1]");
    p[i] = v.get<double>();
  }
  RowMatrix x(static_cast<Eigen::Index>(n), 0);
  if (const auto cit = body.find("covariates"); cit != body.end() && !cit->is_null()) {
    if (!cit->is_array() || cit->size() != n)
      bad_request("covariates: must be an array with one row per p-value");
    const std::size_t d = (*cit)[0].is_array() ? (*cit)[0].size() : 0;
    x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i) {
      const json& row = (*cit)[i];
      if (!row.is_array() || row.size() != d)
        bad_request("covariates[" + std::to_string(i) + "]: expected " + std::to_string(d) + " numbers");
      for (std::size_t j = 0; j < d; ++j) {
        if (!row[j].is_number() || !std::isfinite(row[j].get<double>()))
          bad_request("covariates[" + std::to_string(i) + "][" + std::to_string(j) + "]: must be a finite number");
        x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j].get<double>();
      }
    }
  }
  SessionPayload out;
  try {
    if (const auto it = body.find("config"); it != body.end() && !it->is_null()) {
      out.config = engine_config_from_json(*it);
    }
    out.config.validate();
  } catch (const std::exception& e) {
    bad_request(std::string("config: ") + e.what());
  }
  out.data = HypothesisSet::ingest(p, std::move(x));
  return out;
}

Session::Session(std::string id, json payload, std::size_t delta_threshold)
    : id_(std::move(id)), payload_(std::move(payload)), delta_threshold_(delta_threshold) {
  SessionPayload parsed = parse_session_payload(payload_);
  covariates_ = parsed.data.covariates();
  try {
    engine_ = std::make_unique<AdaptEngine>(std::move(parsed.data), std::move(parsed.config));
  } catch (const ConfigError& e) {
    bad_request(std::string("config: ") + e.what());
  } catch (const DataError& e) {
    bad_request(e.what());
  }
  commit();
}

bool Session::finalized() const { return finalized_.load(); }

std::shared_ptr<const std::string> Session::state() const {
  std::lock_guard<std::mutex> lock(state_mutex_);
  return state_;
}

json Session::entry(std::size_t i, const std::vector<double>& lfdr) const {
  const MaskState& v = engine_->view();
  json x = json::array();
  for (Eigen::Index j = 0; j < covariates_.cols(); ++j) x.push_back(covariates_(static_cast<Eigen::Index>(i), j));
  return {{"i", i},
          {"x", std::move(x)},
          {"masked", !v.is_revealed(i)},
          {"value", v.visible[i]},
          {"s", v.surface[i]},
          {"lfdr", lfdr.empty() ? json(nullptr) : json(lfdr[i])}};
}

json Session::build_snapshot(std::vector<json>* entries) const {
  const AdaptEngine& e = *engine_;
  const MaskState& v = e.view();
  const EngineConfig& c = e.config();
  json s;
  s["schema"] = kSchemaVersion;
  s["status"] = finalized() ? "finalized" : "active";
  s["step"] = e.step_index();
  s["n"] = v.size();
  s["dim"] = covariates_.cols();
  s["A"] = v.A;
  s["R"] = v.R;
  s["fdp_hat"] = v.fdp_hat();
  s["masked"] = v.masked_count();
  s["terminal"] = e.terminal();
  s["family"] = family_name(c.family);
  s["strategy"] = strategy_name(c.strategy);
  s["criterion"] = c.criterion.label();
  json candidates = json::array();
  for (const auto& pair : c.candidates) candidates.push_back(pair.label());
  s["candidates"] = candidates;
  s["features"] = e.fit() ? json(e.features().label()) : json(nullptr);
  s["refit_every"] = e.refit_every();
  s["fit"] = e.fit() ? fit_summary(*e.fit()) : json(nullptr);
  json table = json::array();
  for (const auto& row : e.selection_table()) {
    table.push_back({{"label", row.label},
                     {"df_pi", row.df_pi},
                     {"df_mu", row.df_mu},
                     {"loglik", row.failed ? json(nullptr) : nullable(row.loglik)},
                     {"score", row.failed ? json(nullptr) : nullable(row.score)},
                     {"failed", row.failed}});
  }
  s["selection"] = table;
  json history = json::array();
  for (const auto& st : e.trace().steps) {
    history.push_back({{"t", st.t}, {"A", st.A}, {"R", st.R}, {"fdp_hat", st.fdp_hat},
                       {"revealed", st.revealed}, {"refit", st.refit}});
  }
  s["history"] = history;
  s["warnings"] = e.warnings();
  s["result"] = result_ ? *result_ : json(nullptr);
  const std::vector<double> lfdr = e.current_lfdr();
  std::vector<json> rows;
  rows.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) rows.push_back(entry(i, lfdr));
  s["hypotheses"] = rows;
  if (entries) *entries = std::move(rows);
  return s;
}

void Session::commit() {
  std::vector<json> rows;
  json snap = build_snapshot(&rows);
  auto full = std::make_shared<const std::string>(snap.dump());
  ++seq_;
  json event;
  event["schema"] = kSchemaVersion;
  event["seq"] = seq_;
  event["step"] = snap["step"];
  const bool delta = rows.size() > delta_threshold_ && !published_entries_.empty();
  if (delta) {
    json changes = json::array();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] != published_entries_[i]) changes.push_back(rows[i]);
    }
    snap.erase("hypotheses");
    event["type"] = "delta";
    event["summary"] = std::move(snap);
    event["changes"] = std::move(changes);
  } else {
    event["type"] = "snapshot";
    event["state"] = std::move(snap);
  }
  published_entries_ = std::move(rows);
  {
    std::lock_guard<std::mutex> lock(state_mutex_);
    state_ = full;
  }
  std::lock_guard<std::mutex> lock(sink_mutex_);
  if (sinks_.empty()) return;
  auto message = std::make_shared<const std::string>(event.dump());
  for (auto& [token, sink] : sinks_) sink(message);
}

std::uint64_t Session::subscribe(EventSink sink) {
  std::lock_guard<std::mutex> lock(sink_mutex_);
  const std::uint64_t token = next_token_++;
  sinks_.emplace(token, std::move(sink));
  return token;
}

void Session::unsubscribe(std::uint64_t token) {
  std::lock_guard<std::mutex> lock(sink_mutex_);
  sinks_.erase(token);
}

namespace {

// Validates an action and returns its normalized form (the log entry).
json normalize_action(const json& a) {
  require_schema(a, "action");
  const auto tit = a.find("type");
  if (tit == a.end() || !tit->is_string()) bad_request("action.type: required string");
  const std::string type = tit->get<std::string>();
  json out{{"schema", kSchemaVersion}, {"type", type}};
  auto alpha_field = [&](bool required) {
    const auto it = a.find("alpha");
    if (it == a.end() || it->is_null()) {
      if (required) bad_request("action.alpha: required");
      out["alpha"] = nullptr;
      return;
    }
    if (!it->is_number() || !(it->get<double>() > 0.0 && it->get<double>() <= 1.0))
      bad_request("action.alpha: must be a number in (0, 1]");
    out["alpha"] = it->get<double>();
  };
  if (type == "step") {
    const auto it = a.find("k");
    std::int64_t k = 1;
    if (it != a.end()) {
      if (!it->is_number_integer()) bad_request("action.k: must be a positive integer");
      k = it->get<std::int64_t>();
    }
    if (k < 1) bad_request("action.k: must be a positive integer");
    out["k"] = k;
  } else if (type == "run_until") {
    alpha_field(true);
  } else if (type == "refit") {
  } else if (type == "set_featurization") {
    const auto it = a.find("candidates");
    if (it == a.end() || !it->is_array() || it->empty()) bad_request("action.candidates: required non-empty array");
    json labels = json::array();
    for (std::size_t i = 0; i < it->size(); ++i) {
      const json& c = (*it)[i];
      if (!c.is_string()) bad_request("action.candidates[" + std::to_string(i) + "]: must be a string");
      try {
        labels.push_back(FeaturizationPair::parse(c.get<std::string>()).label());
      } catch (const std::exception& e) {
        bad_request("action.candidates[" + std::to_string(i) + "]: " + e.what());
      }
    }
    out["candidates"] = labels;
    if (const auto cit = a.find("criterion"); cit != a.end() && !cit->is_null()) {
      try {
        out["criterion"] = SelectionCriterion::parse(cit->get<std::string>()).label();
      } catch (const std::exception& e) {
        bad_request(std::string("action.criterion: ") + e.what());
      }
    } else {
      out["criterion"] = nullptr;
    }
  } else if (type == "set_family") {
    const auto it = a.find("family");
    if (it == a.end() || !it->is_string()) bad_request("action.family: required string");
    try {
      out["family"] = family_name(parse_family(it->get<std::string>()));
    } catch (const std::exception& e) {
      bad_request(std::string("action.family: ") + e.what());
    }
  } else if (type == "finalize") {
    alpha_field(false);
  } else {
    bad_request("action.type: unknown action '" + type + "'");
  }
  return out;
}

}  // namespace

void Session::apply(const json& a) {
  const std::string type = a.at("type").get<std::string>();
  // Each individual step is published while someone is listening; otherwise
  // only the state after the whole action is committed.
  bool committed = false;
  auto transition = [&](bool last) {
    bool listening = false;
    {
      std::lock_guard<std::mutex> lock(sink_mutex_);
      listening = !sinks_.empty();
    }
    committed = listening || last;
    if (committed) commit();
  };
  if (type == "step") {
    const auto k = a.at("k").get<std::int64_t>();
    for (std::int64_t j = 0; j < k && !engine_->terminal(); ++j) {
      engine_->step(1);
      transition(j + 1 == k || engine_->terminal());
    }
    if (!committed) commit();
    return;
  } else if (type == "run_until") {
    const double alpha = a.at("alpha").get<double>();
    while (engine_->view().fdp_hat() > alpha && !engine_->terminal()) {
      engine_->step(1);
      transition(engine_->view().fdp_hat() <= alpha || engine_->terminal());
    }
    if (!committed) commit();
    return;
  } else if (type == "refit") {
    engine_->refit();
  } else if (type == "set_featurization") {
    std::vector<FeaturizationPair> cands;
    for (const auto& c : a.at("candidates")) cands.push_back(FeaturizationPair::parse(c.get<std::string>()));
    std::optional<SelectionCriterion> crit;
    if (!a.at("criterion").is_null()) crit = SelectionCriterion::parse(a.at("criterion").get<std::string>());
    try {
      engine_->set_candidates(std::move(cands), crit);
    } catch (const ConfigError& e) {
      bad_request(std::string("action.candidates: ") + e.what());
    } catch (const DataError& e) {
      bad_request(std::string("action.candidates: ") + e.what());
    }
  } else if (type == "set_family") {
    engine_->set_family(parse_family(a.at("family").get<std::string>()));
  } else if (type == "finalize") {
    std::optional<double> alpha;
    if (!a.at("alpha").is_null()) alpha = a.at("alpha").get<double>();
    // Without a level the analyst stops where the session stands.
    std::vector<std::size_t> stop_here;
    if (!alpha) {
      const MaskState& v = engine_->view();
      const json& p = payload_.at("pvalues");
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v.is_revealed(i) && p[i].get<double>() < 0.5) stop_here.push_back(i);
      }
    }
    const AdaptResult r = engine_->finalize(alpha, true);
    json res;
    res["alpha"] = alpha ? json(*alpha) : json(nullptr);
    res["alpha_reached"] = r.trace.final_alpha_reached ? json(*r.trace.final_alpha_reached) : json(nullptr);
    res["rejections"] = alpha ? r.rejections : stop_here;
    res["qvalues"] = r.qvalues;
    result_ = std::move(res);
    finalized_ = true;
  }
  transition(true);
}

std::shared_ptr<const std::string> Session::act(const json& action) {
  std::lock_guard<std::mutex> lock(act_mutex_);
  if (finalized()) throw ServiceError(409, "session is finalized");
  const json normalized = normalize_action(action);
  apply(normalized);
  log_.push_back(normalized);
  return state();
}

json Session::log() const {
  std::lock_guard<std::mutex> lock(act_mutex_);
  return {{"schema", kSchemaVersion}, {"actions", log_}};
}

json Session::persisted() const {
  std::lock_guard<std::mutex> lock(act_mutex_);
  return {{"schema", kSchemaVersion}, {"id", id_}, {"payload", payload_}, {"actions", log_}};
}

std::string Session::trace_dump() const {
  std::lock_guard<std::mutex> lock(act_mutex_);
  const ProtocolTrace& tr = engine_->trace();
  json values = json::array();
  for (double v : tr.revealed_value) values.push_back(nullable(v));
  json j{{"steps", trace_json(tr)}, {"reveal_time", tr.reveal_time}, {"revealed_value", values}};
  return j.dump();
}

std::optional<json> Session::result() const {
  std::lock_guard<std::mutex> lock(act_mutex_);
  return result_;
}

std::unique_ptr<Session> Session::restore(const json& persisted, std::size_t delta_threshold) {
  require_schema(persisted, "session");
  auto s = std::make_unique<Session>(persisted.at("id").get<std::string>(), persisted.at("payload"),
                                     delta_threshold);
  for (const auto& a : persisted.at("actions")) s->act(a);
  return s;
}

json replay_result(const json& persisted) {
  const auto s = Session::restore(persisted);
  json out;
  out["schema"] = kSchemaVersion;
  out["result"] = s->result() ? *s->result() : json(nullptr);
  out["state"] = json::parse(*s->state());
  return out;
}

SessionStore::SessionStore(std::optional<std::filesystem::path> persist_dir, std::size_t delta_threshold)
    : dir_(std::move(persist_dir)), delta_threshold_(delta_threshold) {
  if (!dir_) return;
  std::filesystem::create_directories(*dir_);
  for (const auto& f : std::filesystem::directory_iterator(*dir_)) {
    if (f.path().extension() != ".json") continue;
    std::ifstream in(f.path());
    const json j = json::parse(in);
    std::shared_ptr<Session> s = Session::restore(j, delta_threshold_);
    const std::string id = s->id();
    sessions_.emplace(id, std::move(s));
  }
}

std::string SessionStore::fresh_id() {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  std::ostringstream os;
  os << std::hex << rng() << "-" << ++counter_;
  return os.str();
}

std::string SessionStore::create(const json& payload) {
  std::string id;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    id = fresh_id();
  }
  auto s = std::make_shared<Session>(id, payload, delta_threshold_);
  save(*s);
  std::lock_guard<std::mutex> lock(mutex_);
  sessions_.emplace(id, std::move(s));
  return id;
}

std::shared_ptr<Session> SessionStore::get(const std::string& id) const {
  std::lock_guard<std::mutex> lock(mutex_);
  const auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::size_t SessionStore::size() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return sessions_.size();
}

void SessionStore::save(const Session& s) const {
  if (!dir_) return;
  const std::filesystem::path target = *dir_ / (s.id() + ".json");
  const std::filesystem::path tmp = *dir_ / (s.id() + ".json.tmp");
  {
    std::ofstream out(tmp);
    out << s.persisted().dump();
    if (!out) throw std::runtime_error("cannot write session file " + tmp.string());
  }
  std::filesystem::rename(tmp, target);
}

namespace {

std::string error_body(const std::string& msg) {
  return json{{"schema", kSchemaVersion}, {"error", msg}}.dump();
}

std::vector<std::string_view> path_parts(std::string_view target) {
  const std::size_t q = target.find('?');
  if (q != std::string_view::npos) target = target.substr(0, q);
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (start <= target.size()) {
    const std::size_t slash = target.find('/', start);
    const std::size_t end = slash == std::string_view::npos ? target.size() : slash;
    if (end > start) parts.push_back(target.substr(start, end - start));
    if (slash == std::string_view::npos) break;
    start = slash + 1;
  }
  return parts;
}

json parse_body(const std::string& body) {
  try {
    return json::parse(body.empty() ? std::string("{}") : body);
  } catch (const json::parse_error& e) {
    bad_request(std::string("body is not valid JSON: ") + e.what());
  }
}

}  // namespace

HttpReply handle_request(SessionStore& store, std::string_view method, std::string_view target,
                         const std::string& body) {
  try {
    const auto parts = path_parts(target);
    if (parts.empty() || parts[0] != "sessions") return {404, error_body("not found")};
    if (parts.size() == 1) {
      if (method != "POST") return {405, error_body("method not allowed")};
      const std::string id = store.create(parse_body(body));
      const auto s = store.get(id);
      return {201, "{\"schema\":" + std::to_string(kSchemaVersion) + ",\"id\":" + json(id).dump() +
                       ",\"state\":" + *s->state() + "}"};
    }
    const auto session = store.get(std::string(parts[1]));
    if (!session) return {404, error_body("unknown session")};
    if (parts.size() != 3) return {404, error_body("not found")};
    const std::string_view leaf = parts[2];
    if (leaf == "state") {
      if (method != "GET") return {405, error_body("method not allowed")};
      return {200, *session->state()};
    }
    if (leaf == "log") {
      if (method != "GET") return {405, error_body("method not allowed")};
      return {200, session->log().dump()};
    }
    if (leaf == "actions" || leaf == "finalize") {
      if (method != "POST") return {405, error_body("method not allowed")};
      json action = parse_body(body);
      if (leaf == "finalize") {
        if (!action.is_object()) bad_request("action: body must be a JSON object");
        action["type"] = "finalize";
      }
      const auto state = session->act(action);
      store.save(*session);
      return {200, *state};
    }
    if (leaf == "stream") return {426, error_body("stream requires a WebSocket upgrade")};
    return {404, error_body("not found")};
  } catch (const ServiceError& e) {
    return {e.status(), error_body(e.what())};
  } catch (const ConfigError& e) {
    return {400, error_body(e.what())};
  } catch (const DataError& e) {
    return {400, error_body(e.what())};
  } catch (const std::exception& e) {
    return {500, error_body(std::string("internal error: ") + e.what())};
  }
}

}  // namespace adapt
