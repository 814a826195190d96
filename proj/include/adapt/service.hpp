#pragma once

// Interactive sessions over the masked view. A Session owns the private data
// and the engine; everything it serializes is a function of the filtration
// (covariates, p' or revealed p, A, R, and quantities fitted from those).

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "adapt/engine.hpp"

namespace adapt {

inline constexpr std::size_t kMaxHypotheses = 1'000'000;
inline constexpr std::size_t kDeltaThreshold = 100'000;

/// Rejected request; `status` is the HTTP status to report.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, const std::string& message) : std::runtime_error(message), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

struct SessionPayload {
  HypothesisSet data;
  EngineConfig config;
};

/// Validates a create-session body; errors name the offending field path.
SessionPayload parse_session_payload(const nlohmann::json& body);

using EventSink = std::function<void(std::shared_ptr<const std::string>)>;

class Session {
 public:
  Session(std::string id, nlohmann::json payload, std::size_t delta_threshold = kDeltaThreshold);

  const std::string& id() const { return id_; }
  bool finalized() const;

  /// Last committed public snapshot (serialized JSON).
  std::shared_ptr<const std::string> state() const;
  /// Applies one analyst action and returns the new snapshot.
  std::shared_ptr<const std::string> act(const nlohmann::json& action);
  /// The action log: every accepted action in order.
  nlohmann::json log() const;
  /// Payload plus action log; enough to rebuild the session.
  nlohmann::json persisted() const;
  /// Public trace: steps, reveal times and revealed values.
  std::string trace_dump() const;
  /// Result of the finalize action, if any.
  std::optional<nlohmann::json> result() const;

  /// Registers a stream subscriber; returns a token for unsubscribe().
  std::uint64_t subscribe(EventSink sink);
  void unsubscribe(std::uint64_t token);

  static std::unique_ptr<Session> restore(const nlohmann::json& persisted,
                                          std::size_t delta_threshold = kDeltaThreshold);

 private:
  nlohmann::json entry(std::size_t i, const std::vector<double>& lfdr) const;
  nlohmann::json build_snapshot(std::vector<nlohmann::json>* entries) const;
  void commit();
  void apply(const nlohmann::json& action);

  std::string id_;
  nlohmann::json payload_;
  std::size_t delta_threshold_;
  RowMatrix covariates_;
  std::unique_ptr<AdaptEngine> engine_;
  nlohmann::json log_ = nlohmann::json::array();
  std::optional<nlohmann::json> result_;
  std::atomic<bool> finalized_{false};
  std::uint64_t seq_ = 0;

  mutable std::mutex act_mutex_;
  mutable std::mutex state_mutex_;
  std::shared_ptr<const std::string> state_;
  std::vector<nlohmann::json> published_entries_;

  std::mutex sink_mutex_;
  std::map<std::uint64_t, EventSink> sinks_;
  std::uint64_t next_token_ = 1;
};

/// Replays a persisted session (payload plus action log) from scratch.
nlohmann::json replay_result(const nlohmann::json& persisted);

class SessionStore {
 public:
  explicit SessionStore(std::optional<std::filesystem::path> persist_dir = std::nullopt,
                        std::size_t delta_threshold = kDeltaThreshold);

  /// Returns the new session id.
  std::string create(const nlohmann::json& payload);
  std::shared_ptr<Session> get(const std::string& id) const;
  std::size_t size() const;
  /// Writes the session file when persistence is enabled.
  void save(const Session& s) const;

 private:
  std::string fresh_id();

  std::optional<std::filesystem::path> dir_;
  std::size_t delta_threshold_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t counter_ = 0;
};

struct HttpReply {
  int status = 200;
  std::string body;
};

/// Routes one HTTP request (everything except the stream upgrade).
HttpReply handle_request(SessionStore& store, std::string_view method, std::string_view target,
                         const std::string& body);

class Server {
 public:
  Server(SessionStore& store, std::string host, unsigned short port, std::size_t threads = 2);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Starts listening; returns the bound port (useful with port 0).
  unsigned short start();
  void stop();
  /// Blocks until stop() is called.
  void wait();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace adapt
