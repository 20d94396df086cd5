#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tge/annotation.hpp"
#include "tge/manifest.hpp"

namespace tge {

struct Session {
  std::string id;
  std::string subject;
  std::string group;
  Tournament tournament;
  std::string created;
  std::string updated;
};

/// Owns all annotation sessions. Every mutation is appended to
/// `<store>/events.jsonl` before it is acknowledged; constructing a manager
/// on an existing store replays that log. Mutations on one session are
/// serialized; different sessions proceed independently.
class SessionManager {
 public:
  using Clock = std::function<std::string()>;

  /// `manifest` supplies the object groups; `store` holds the event log and snapshots.
  SessionManager(Manifest manifest, std::filesystem::path store, std::size_t rounds_total = 6, Clock clock = {});

  /// {session, subject, group, round, pairings: [{left, right}]}
  nlohmann::json create_session(const std::string& subject, const std::string& group);
  /// {pair: {left, right, meshUrlLeft, meshUrlRight}, round, roundsTotal, remaining} or {complete, scores}
  nlohmann::json next_pair(const std::string& session_id) const;
  /// {ok, remaining, round, complete}
  nlohmann::json post_vote(const std::string& session_id, const std::string& left, const std::string& right,
                           const std::string& winner);
  /// {groups: [{id, meshes, sessions, completed}]}
  nlohmann::json groups() const;
  /// Manifest fragment for one group with aggregated, outlier-filtered scores.
  nlohmann::json export_group(const std::string& group) const;

  /// Path of a distorted mesh served at /meshes/{group}/{id}.
  std::filesystem::path mesh_path(const std::string& group, const std::string& mesh_id) const;

  /// Writes `<store>/snapshot.json` with the state of every session.
  void write_snapshot() const;
  nlohmann::json snapshot() const;

  std::size_t session_count() const;
  const Manifest& manifest() const { return manifest_; }

 private:
  struct Slot {
    explicit Slot(Session s) : session(std::move(s)) {}
    mutable std::mutex mu;
    Session session;
  };

  void append_event(const nlohmann::json& event);
  void replay();
  Slot& slot(const std::string& id) const;
  std::string make_id();
  nlohmann::json session_json(const Session& s) const;

  Manifest manifest_;
  std::filesystem::path store_;
  std::size_t rounds_total_;
  Clock clock_;

  mutable std::shared_mutex map_mu_;
  std::map<std::string, std::unique_ptr<Slot>> sessions_;
  std::size_t next_id_ = 1;

  std::mutex log_mu_;
  std::size_t events_since_snapshot_ = 0;
};

/// Session states rebuilt from an event log alone (no dataset needed).
std::vector<Session> replay_events(const std::filesystem::path& events_file);

/// Aggregates every completed session of `sessions`, grouped by object group.
nlohmann::json dataset_statistics(const std::vector<Session>& sessions);

/// Current UTC time as an ISO-8601 string.
std::string utc_timestamp();

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
};

/// HTTP front end for a SessionManager.
class AnnotationServer {
 public:
  explicit AnnotationServer(SessionManager& manager);
  ~AnnotationServer();
  AnnotationServer(const AnnotationServer&) = delete;
  AnnotationServer& operator=(const AnnotationServer&) = delete;

  /// Binds and serves on a background thread; returns the bound port.
  int start(const ServerConfig& config);
  /// Binds and serves on the calling thread until stop().
  void run(const ServerConfig& config);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace tge
