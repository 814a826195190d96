#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "adapt/io.hpp"
#include "adapt/service.hpp"

using namespace adapt;
using nlohmann::json;

namespace {

json payload(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  json p = json::array();
  json x = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = u(rng);
    const bool signal = u(rng) < 0.2 + 0.5 * xi;
    // Dyadic values keep 1 - (1 - p) == p exact for the mirror-swap checks.
    const double raw = signal ? std::pow(u(rng), 4.0) : u(rng);
    p.push_back(std::ldexp(std::max(1.0, std::round(std::ldexp(raw, 20))), -20));
    x.push_back(json::array({xi}));
  }
  return {{"schema", 1},
          {"pvalues", p},
          {"covariates", x},
          {"config", {{"candidates", {"identity"}}, {"em", {{"iterations", 5}}}, {"seed", 3}}}};
}

json step(std::int64_t k) { return {{"schema", 1}, {"type", "step"}, {"k", k}}; }

json state_of(const Session& s) { return json::parse(*s.state()); }

int status_of(SessionStore& store, const char* method, const std::string& target, const json& body) {
  return handle_request(store, method, target, body.dump()).status;
}

std::string error_of(SessionStore& store, const json& body) {
  const HttpReply r = handle_request(store, "POST", "/sessions", body.dump());
  return json::parse(r.body).value("error", "");
}

struct Recorder {
  std::vector<std::string> events;
  EventSink sink() {
    return [this](std::shared_ptr<const std::string> m) { events.push_back(*m); };
  }
};

}  // namespace

TEST_CASE("a new session shows only the masked view") {
  const json body = payload(60, 1);
  Session s("s1", body);
  const json st = state_of(s);
  CHECK(st["schema"] == 1);
  CHECK(st["status"] == "active");
  CHECK(st["step"] == 0);
  CHECK(st["n"] == 60);
  CHECK(st["dim"] == 1);
  REQUIRE(st["hypotheses"].size() == 60);
  std::size_t a = 0;
  std::size_t r = 0;
  for (std::size_t i = 0; i < 60; ++i) {
    const double p = body["pvalues"][i];
    const json& e = st["hypotheses"][i];
    CHECK(e["i"] == i);
    CHECK(e["x"][0] == body["covariates"][i][0]);
    if (e["masked"].get<bool>()) {
      CHECK(e["value"].get<double>() == std::min(p, 1.0 - p));
      (p < 0.5 ? r : a) += 1;
    } else {
      CHECK(e["value"].get<double>() == p);
    }
  }
  CHECK(st["A"] == a);
  CHECK(st["R"] == r);
  CHECK(st["fdp_hat"].get<double>() == doctest::Approx(compute_fdp_hat(a, r)));
  // The id is not part of the view, so two sessions over the same data agree.
  CHECK(*Session("other", body).state() == *s.state());
}

TEST_CASE("create-session validation names the offending field") {
  SessionStore store;
  CHECK(error_of(store, json{{"pvalues", {0.1}}}) == "payload.schema: required");
  CHECK(error_of(store, json{{"schema", 2}, {"pvalues", {0.1}}}).rfind("payload.schema: unsupported", 0) == 0);
  CHECK(error_of(store, json{{"schema", 1}, {"pvalues", json::array()}}) == "pvalues: must not be empty");
  CHECK(error_of(store, json{{"schema", 1}, {"pvalues", {0.1, 0.2, 1.5}}}) == "pvalues[2]: must be a number in [0, 1]");
  CHECK(error_of(store, json{{"schema", 1}, {"pvalues", {0.1, 0.2}}, {"covariates", {{1.0}, {1.0, 2.0}}}}) ==
        "covariates[1]: expected 1 numbers");
  CHECK(error_of(store, json{{"schema", 1}, {"pvalues", {0.1}}, {"extra", 1}}) == "payload.extra: unknown field");
  CHECK(error_of(store, json{{"schema", 1}, {"pvalues", {0.1}}, {"config", {{"s0", 0.9}}}}).rfind("config: ", 0) == 0);
  CHECK(handle_request(store, "POST", "/sessions", "{not json").status == 400);
  CHECK(store.size() == 0);
}

TEST_CASE("oversized payloads are refused with 413") {
  SessionStore store;
  json body{{"schema", 1}, {"pvalues", json::array()}};
  for (std::size_t i = 0; i <= kMaxHypotheses; ++i) body["pvalues"].push_back(0.5);
  CHECK(status_of(store, "POST", "/sessions", body) == 413);
}

TEST_CASE("routes, ids and status codes") {
  SessionStore store;
  const HttpReply created = handle_request(store, "POST", "/sessions", payload(40, 2).dump());
  REQUIRE(created.status == 201);
  const std::string id = json::parse(created.body)["id"];
  const HttpReply again = handle_request(store, "POST", "/sessions", payload(40, 2).dump());
  CHECK(json::parse(again.body)["id"] != id);
  CHECK(store.size() == 2);

  CHECK(handle_request(store, "GET", "/sessions/" + id + "/state", "").status == 200);
  CHECK(handle_request(store, "GET", "/sessions/nope/state", "").status == 404);
  CHECK(handle_request(store, "GET", "/elsewhere", "").status == 404);
  CHECK(handle_request(store, "DELETE", "/sessions/" + id + "/state", "").status == 405);
  CHECK(status_of(store, "POST", "/sessions/" + id + "/actions", json{{"schema", 1}, {"type", "jump"}}) == 400);
  CHECK(status_of(store, "POST", "/sessions/" + id + "/actions", json{{"type", "step"}}) == 400);
  CHECK(status_of(store, "POST", "/sessions/" + id + "/actions", step(0)) == 400);
  CHECK(status_of(store, "POST", "/sessions/" + id + "/actions",
                  json{{"schema", 1}, {"type", "set_family"}, {"family", "poisson"}}) == 400);

  const HttpReply stepped = handle_request(store, "POST", "/sessions/" + id + "/actions", step(2).dump());
  REQUIRE(stepped.status == 200);
  CHECK(json::parse(stepped.body)["step"] == 2);

  const HttpReply fin = handle_request(store, "POST", "/sessions/" + id + "/finalize", json{{"schema", 1}}.dump());
  REQUIRE(fin.status == 200);
  const json done = json::parse(fin.body);
  CHECK(done["status"] == "finalized");
  CHECK(done["masked"] == 0);
  CHECK(done["result"]["qvalues"].size() == 40);
  CHECK(status_of(store, "POST", "/sessions/" + id + "/actions", step(1)) == 409);
  CHECK(status_of(store, "POST", "/sessions/" + id + "/finalize", json{{"schema", 1}}) == 409);

  const json log = json::parse(handle_request(store, "GET", "/sessions/" + id + "/log", "").body);
  REQUIRE(log["actions"].size() == 2);
  CHECK(log["actions"][0]["type"] == "step");
  CHECK(log["actions"][0]["k"] == 2);
  CHECK(log["actions"][1]["type"] == "finalize");
  CHECK_FALSE(log.contains("payload"));
}

TEST_CASE("finalize without a level rejects what is masked on the small side") {
  const json body = payload(50, 4);
  Session s("s", body);
  s.act(step(5));
  const json before = state_of(s);
  std::vector<std::size_t> expected;
  for (std::size_t i = 0; i < 50; ++i) {
    if (before["hypotheses"][i]["masked"].get<bool>() && body["pvalues"][i].get<double>() < 0.5) expected.push_back(i);
  }
  CHECK(expected.size() == before["R"].get<std::size_t>());
  s.act(json{{"schema", 1}, {"type", "finalize"}});
  CHECK(state_of(s)["result"]["rejections"].get<std::vector<std::size_t>>() == expected);
}

TEST_CASE("every step of an action is published to every subscriber") {
  Session s("s", payload(60, 5));
  Recorder one;
  Recorder two;
  s.subscribe(one.sink());
  const auto token = s.subscribe(two.sink());
  s.act(step(3));
  REQUIRE(one.events.size() == 3);
  CHECK(one.events == two.events);
  for (std::size_t k = 0; k < 3; ++k) {
    const json e = json::parse(one.events[k]);
    CHECK(e["type"] == "snapshot");
    CHECK(e["state"]["step"] == k + 1);
    CHECK(e["seq"] == json::parse(one.events[0])["seq"].get<int>() + static_cast<int>(k));
  }
  CHECK(json::parse(one.events.back())["state"].dump() == *s.state());
  s.unsubscribe(token);
  s.act(json{{"schema", 1}, {"type", "refit"}});
  CHECK(one.events.size() == 4);
  CHECK(two.events.size() == 3);
}

TEST_CASE("large sessions stream deltas that rebuild the full state") {
  Session s("s", payload(80, 6), 10);
  json view = state_of(s);
  Recorder rec;
  s.subscribe(rec.sink());
  s.act(step(4));
  s.act(json{{"schema", 1}, {"type", "set_featurization"}, {"candidates", {"spline(3)"}}});
  s.act(step(2));
  REQUIRE(rec.events.size() == 7);
  // Steps between refits only touch the revealed entries and their surface.
  int partial = 0;
  for (const auto& text : rec.events) {
    const json e = json::parse(text);
    REQUIRE(e["type"] == "delta");
    partial += e["changes"].size() < 80 ? 1 : 0;
    json hyps = view["hypotheses"];
    for (const auto& c : e["changes"]) hyps[c["i"].get<std::size_t>()] = c;
    view = e["summary"];
    view["hypotheses"] = hyps;
  }
  CHECK(view == state_of(s));
  CHECK(partial > 0);
}

TEST_CASE("replaying the action log reproduces the session") {
  const json body = payload(70, 7);
  Session s("s", body);
  s.act(step(5));
  s.act(json{{"schema", 1}, {"type", "set_family"}, {"family", "gaussian"}});
  s.act(json{{"schema", 1}, {"type", "run_until"}, {"alpha", 0.3}});
  s.act(json{{"schema", 1}, {"type", "finalize"}, {"alpha", 0.2}});
  const json replayed = replay_result(s.persisted());
  CHECK(replayed["state"] == state_of(s));
  CHECK(replayed["result"] == *s.result());
  CHECK(Session::restore(s.persisted())->trace_dump() == s.trace_dump());
}

TEST_CASE("sessions survive a restart of the store") {
  const auto dir = std::filesystem::temp_directory_path() / "adapt_service_store_test";
  std::filesystem::remove_all(dir);
  std::string id;
  std::string state;
  {
    SessionStore store(dir);
    id = json::parse(handle_request(store, "POST", "/sessions", payload(40, 8).dump()).body)["id"].get<std::string>();
    handle_request(store, "POST", "/sessions/" + id + "/actions", step(6).dump());
    state = *store.get(id)->state();
  }
  SessionStore reopened(dir);
  REQUIRE(reopened.get(id));
  CHECK(*reopened.get(id)->state() == state);
  std::filesystem::remove_all(dir);
}

TEST_CASE("concurrent actions on one session are serialized") {
  Session s("s", payload(200, 9));
  std::vector<std::thread> pool;
  for (int t = 0; t < 4; ++t) pool.emplace_back([&s]() { s.act(step(5)); });
  for (auto& t : pool) t.join();
  const json st = state_of(s);
  CHECK(st["step"] == 20);
  CHECK(st["history"].size() == 21);
}

TEST_CASE("swapping a masked pair across the mirror leaves the public record unchanged") {
  // One masked p-value moves from the upper to the lower side and another
  // moves the other way, so A and R are unchanged and only private data differ.
  std::size_t compared = 0;
  for (std::uint64_t seed = 10; seed < 16; ++seed) {
    const json body = payload(80, seed);
    const json st = state_of(Session("s", body));
    std::vector<std::size_t> upper;
    std::vector<std::size_t> lower;
    for (std::size_t i = 0; i < 80; ++i) {
      if (!st["hypotheses"][i]["masked"].get<bool>()) continue;
      (body["pvalues"][i].get<double>() >= 0.5 ? upper : lower).push_back(i);
    }
    if (upper.empty() || lower.empty()) continue;
    const std::size_t i = upper[seed % upper.size()];
    const std::size_t j = lower[seed % lower.size()];
    json flipped = body;
    flipped["pvalues"][i] = 1.0 - body["pvalues"][i].get<double>();
    flipped["pvalues"][j] = 1.0 - body["pvalues"][j].get<double>();
    Session a("a", body);
    Session b("b", flipped);
    Recorder ra;
    Recorder rb;
    a.subscribe(ra.sink());
    b.subscribe(rb.sink());
    CHECK(*a.state() == *b.state());
    for (int k = 0; k < 80; ++k) {
      const json sa = state_of(a);
      if (!sa["hypotheses"][i]["masked"].get<bool>() || !sa["hypotheses"][j]["masked"].get<bool>()) break;
      a.act(step(1));
      b.act(step(1));
      const json na = state_of(a);
      if (!na["hypotheses"][i]["masked"].get<bool>() || !na["hypotheses"][j]["masked"].get<bool>()) break;
      REQUIRE(*a.state() == *b.state());
      CHECK(a.trace_dump() == b.trace_dump());
      CHECK(ra.events.back() == rb.events.back());
      ++compared;
    }
  }
  CHECK(compared > 20);
}

TEST_CASE("the network server speaks HTTP and streams over WebSocket") {
  namespace beast = boost::beast;
  namespace http = beast::http;
  namespace websocket = beast::websocket;
  namespace net = boost::asio;
  using tcp = net::ip::tcp;

  SessionStore store;
  Server server(store, "127.0.0.1", 0, 2);
  const unsigned short port = server.start();
  REQUIRE(port != 0);

  net::io_context ioc;
  tcp::resolver resolver(ioc);
  const auto endpoints = resolver.resolve("127.0.0.1", std::to_string(port));
  auto request = [&](http::verb verb, const std::string& target, const std::string& body) {
    beast::tcp_stream stream(ioc);
    stream.connect(endpoints);
    http::request<http::string_body> req{verb, target, 11};
    req.set(http::field::host, "127.0.0.1");
    req.set(http::field::content_type, "application/json");
    req.body() = body;
    req.prepare_payload();
    http::write(stream, req);
    beast::flat_buffer buf;
    http::response<http::string_body> res;
    http::read(stream, buf, res);
    beast::error_code ec;
    stream.socket().shutdown(tcp::socket::shutdown_both, ec);
    return res;
  };

  const auto created = request(http::verb::post, "/sessions", payload(50, 20).dump());
  REQUIRE(created.result_int() == 201);
  const std::string id = json::parse(created.body())["id"];
  CHECK(request(http::verb::get, "/sessions/zzz/state", "").result_int() == 404);

  websocket::stream<tcp::socket> ws(ioc);
  net::connect(ws.next_layer(), endpoints);
  ws.handshake("127.0.0.1", "/sessions/" + id + "/stream");
  beast::flat_buffer buf;
  ws.read(buf);
  const json hello = json::parse(beast::buffers_to_string(buf.data()));
  buf.consume(buf.size());
  CHECK(hello["type"] == "hello");
  CHECK(hello["state"]["step"] == 0);

  const auto acted = request(http::verb::post, "/sessions/" + id + "/actions", step(2).dump());
  REQUIRE(acted.result_int() == 200);
  std::vector<json> events;
  for (int k = 0; k < 2; ++k) {
    ws.read(buf);
    events.push_back(json::parse(beast::buffers_to_string(buf.data())));
    buf.consume(buf.size());
  }
  CHECK(events[0]["state"]["step"] == 1);
  CHECK(events[1]["state"]["step"] == 2);
  CHECK(events[1]["state"] == json::parse(acted.body()));
  ws.close(websocket::close_code::normal);
  server.stop();
}
