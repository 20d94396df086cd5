#include "tge/service.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <httplib.h>

#include "tge/error.hpp"

namespace tge {

using nlohmann::json;

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%S") << '.' << std::setw(3) << std::setfill('0') << ms << 'Z';
  return out.str();
}

namespace {

constexpr std::size_t kSnapshotEvery = 50;

json pairing_json(const Pairing& p) { return {{"left", p.left}, {"right", p.right}}; }

std::string mesh_url(const std::string& group, const std::string& id) { return "/meshes/" + group + "/" + id; }

std::vector<std::string> participants_of(const ObjectGroup& g) {
  std::vector<std::string> ids;
  for (const auto& d : g.distorted) ids.push_back(d.id);
  return ids;
}

// Applies one logged event to `sessions`. Returns false for unknown types.
bool apply_event(std::map<std::string, Session>& sessions, const json& e) {
  const auto type = e.at("type").get<std::string>();
  if (type == "session") {
    Session s{e.at("id").get<std::string>(),
              e.at("subject").get<std::string>(),
              e.at("group").get<std::string>(),
              Tournament(e.at("participants").get<std::vector<std::string>>(), e.at("rounds_total").get<std::size_t>()),
              e.value("time", ""),
              e.value("time", "")};
    sessions.insert_or_assign(s.id, std::move(s));
    return true;
  }
  if (type == "vote") {
    const Vote v = Vote::from_json(e);
    auto it = sessions.find(v.session);
    if (it == sessions.end()) throw FormatError("event log: vote for unknown session " + v.session);
    it->second.tournament.record_result(v);
    it->second.updated = v.timestamp;
    return true;
  }
  return false;
}

std::map<std::string, Session> read_log(const std::filesystem::path& file) {
  std::map<std::string, Session> sessions;
  std::ifstream in(file);
  if (!in) return sessions;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json e;
    try {
      e = json::parse(line);
    } catch (const json::exception&) {
      // A torn final line from a crash mid-append is ignored; anything earlier is corruption.
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw FormatError("event log line " + std::to_string(lineno) + " is not JSON");
    }
    apply_event(sessions, e);
  }
  return sessions;
}

}  // namespace

// ---------------------------------------------------------------- manager

SessionManager::SessionManager(Manifest manifest, std::filesystem::path store, std::size_t rounds_total, Clock clock)
    : manifest_(std::move(manifest)), store_(std::move(store)), rounds_total_(rounds_total), clock_(std::move(clock)) {
  if (rounds_total_ < 1) throw std::invalid_argument("rounds_total must be >= 1");
  if (!clock_) clock_ = utc_timestamp;
  std::filesystem::create_directories(store_);
  replay();
}

void SessionManager::replay() {
  auto sessions = read_log(store_ / "events.jsonl");
  for (auto& [id, s] : sessions) {
    if (id.size() > 1 && id[0] == 's') {
      try {
        next_id_ = std::max(next_id_, static_cast<std::size_t>(std::stoull(id.substr(1))) + 1);
      } catch (const std::exception&) {
      }
    }
    sessions_.emplace(id, std::make_unique<Slot>(std::move(s)));
  }
}

void SessionManager::append_event(const json& event) {
  std::lock_guard lock(log_mu_);
  std::ofstream out(store_ / "events.jsonl", std::ios::app);
  if (!out) throw IoError("cannot append to event log in " + store_.string());
  out << event.dump() << '\n';
  out.flush();
  if (!out) throw IoError("failed writing event log");
  ++events_since_snapshot_;
}

SessionManager::Slot& SessionManager::slot(const std::string& id) const {
  std::shared_lock lock(map_mu_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("unknown session '" + id + "'");
  return *it->second;
}

std::string SessionManager::make_id() {
  std::ostringstream out;
  out << 's' << std::setw(6) << std::setfill('0') << next_id_++;
  return out.str();
}

json SessionManager::create_session(const std::string& subject, const std::string& group) {
  const ObjectGroup* g = manifest_.find(group);
  if (g == nullptr) throw NotFoundError("unknown object group '" + group + "'");
  auto ids = participants_of(*g);
  if (ids.size() < 2) throw std::invalid_argument("object group '" + group + "' has fewer than 2 meshes");

  std::unique_lock lock(map_mu_);
  const std::string id = make_id();
  const std::string now = clock_();
  Session s{id, subject, group, Tournament(ids, rounds_total_), now, now};
  append_event({{"type", "session"},
                {"id", id},
                {"subject", subject},
                {"group", group},
                {"participants", ids},
                {"rounds_total", rounds_total_},
                {"time", now}});
  json out = {{"session", id}, {"subject", subject}, {"group", group}, {"round", 1}, {"pairings", json::array()}};
  for (const auto& p : s.tournament.pending()) out["pairings"].push_back(pairing_json(p));
  sessions_.emplace(id, std::make_unique<Slot>(std::move(s)));
  return out;
}

json SessionManager::next_pair(const std::string& session_id) const {
  Slot& sl = slot(session_id);
  std::lock_guard lock(sl.mu);
  const Session& s = sl.session;
  if (s.tournament.complete()) {
    json scores = s.tournament.final_scores();
    json wins = s.tournament.win_table();
    return {{"complete", true}, {"scores", scores}, {"wins", wins}, {"roundsTotal", s.tournament.rounds_total()}};
  }
  const auto pending = s.tournament.pending();
  const Pairing& p = pending.front();
  return {{"complete", false},
          {"pair",
           {{"left", p.left},
            {"right", p.right},
            {"meshUrlLeft", mesh_url(s.group, p.left)},
            {"meshUrlRight", mesh_url(s.group, p.right)}}},
          {"round", s.tournament.current_round()},
          {"roundsTotal", s.tournament.rounds_total()},
          {"remaining", pending.size()}};
}

json SessionManager::post_vote(const std::string& session_id, const std::string& left, const std::string& right,
                               const std::string& winner) {
  json ack;
  {
    Slot& sl = slot(session_id);
    std::lock_guard lock(sl.mu);
    Session& s = sl.session;
    Vote v;
    v.session = s.id;
    v.subject = s.subject;
    v.round = s.tournament.current_round();
    v.left = left;
    v.right = right;
    v.winner = winner;
    v.timestamp = clock_();

    Tournament next = s.tournament;
    next.record_result(v);  // throws with `s` untouched
    json event = v.to_json();
    event["type"] = "vote";
    append_event(event);
    s.tournament = std::move(next);
    s.updated = v.timestamp;
    ack = {{"ok", true},
           {"remaining", s.tournament.pending().size()},
           {"round", s.tournament.current_round()},
           {"complete", s.tournament.complete()}};
  }
  bool snapshot_due = false;
  {
    std::lock_guard log_lock(log_mu_);
    snapshot_due = events_since_snapshot_ >= kSnapshotEvery;
  }
  if (snapshot_due) write_snapshot();
  return ack;
}

json SessionManager::groups() const {
  std::map<std::string, std::pair<std::size_t, std::size_t>> counts;  // sessions, completed
  {
    std::shared_lock lock(map_mu_);
    for (const auto& [id, sl] : sessions_) {
      std::lock_guard l(sl->mu);
      auto& c = counts[sl->session.group];
      ++c.first;
      c.second += sl->session.tournament.complete() ? 1 : 0;
    }
  }
  json out = {{"groups", json::array()}};
  for (const auto& g : manifest_.objects) {
    json meshes = json::array();
    for (const auto& d : g.distorted) meshes.push_back({{"id", d.id}, {"url", mesh_url(g.id, d.id)}});
    const auto c = counts[g.id];
    out["groups"].push_back({{"id", g.id}, {"meshes", meshes}, {"sessions", c.first}, {"completed", c.second}});
  }
  return out;
}

json SessionManager::export_group(const std::string& group) const {
  const ObjectGroup* g = manifest_.find(group);
  if (g == nullptr) throw NotFoundError("unknown object group '" + group + "'");
  std::vector<Session> done;
  {
    std::shared_lock lock(map_mu_);
    for (const auto& [id, sl] : sessions_) {
      std::lock_guard l(sl->mu);
      if (sl->session.group == group && sl->session.tournament.complete()) done.push_back(sl->session);
    }
  }
  if (done.empty()) throw NotFoundError("object group '" + group + "' has no completed sessions");
  std::vector<AnnotationRecord> records;
  for (const auto& s : done) {
    auto r = records_from(s.tournament, s.subject);
    records.insert(records.end(), r.begin(), r.end());
  }
  const DatasetAggregate agg = aggregate_dataset(records);

  Manifest fragment;
  fragment.root = manifest_.root;
  ObjectGroup copy = *g;
  for (auto& d : copy.distorted) {
    d.score.reset();
    for (const auto& m : agg.meshes) {
      if (m.mesh == d.id) d.score = m.mean;
    }
  }
  fragment.objects.push_back(copy);
  json out = fragment.to_json().at("objects").at(0);
  out["statistics"] = agg.to_json();
  out["statistics"].erase("records");
  out["sessions"] = done.size();
  return out;
}

std::filesystem::path SessionManager::mesh_path(const std::string& group, const std::string& mesh_id) const {
  const ObjectGroup* g = manifest_.find(group);
  if (g == nullptr) throw NotFoundError("unknown object group '" + group + "'");
  for (const auto& d : g->distorted) {
    if (d.id == mesh_id) return d.path;
  }
  if (mesh_id == "reference") return g->reference;
  throw NotFoundError("unknown mesh '" + mesh_id + "' in group '" + group + "'");
}

json SessionManager::session_json(const Session& s) const {
  return {{"id", s.id},           {"subject", s.subject}, {"group", s.group},
          {"created", s.created}, {"updated", s.updated}, {"tournament", s.tournament.to_json()}};
}

json SessionManager::snapshot() const {
  json out = {{"sessions", json::array()}};
  std::shared_lock lock(map_mu_);
  for (const auto& [id, sl] : sessions_) {
    std::lock_guard l(sl->mu);
    out["sessions"].push_back(session_json(sl->session));
  }
  return out;
}

void SessionManager::write_snapshot() const {
  const json snap = snapshot();
  const auto tmp = store_ / "snapshot.json.tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write snapshot in " + store_.string());
    out << snap.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, store_ / "snapshot.json");
  auto* self = const_cast<SessionManager*>(this);
  std::lock_guard lock(self->log_mu_);
  self->events_since_snapshot_ = 0;
}

std::size_t SessionManager::session_count() const {
  std::shared_lock lock(map_mu_);
  return sessions_.size();
}

std::vector<Session> replay_events(const std::filesystem::path& events_file) {
  if (!std::filesystem::exists(events_file)) throw IoError("event log not found: " + events_file.string());
  auto sessions = read_log(events_file);
  std::vector<Session> out;
  for (auto& [id, s] : sessions) out.push_back(std::move(s));
  return out;
}

json dataset_statistics(const std::vector<Session>& sessions) {
  std::map<std::string, std::vector<AnnotationRecord>> by_group;
  std::map<std::string, std::size_t> incomplete;
  for (const auto& s : sessions) {
    if (!s.tournament.complete()) {
      ++incomplete[s.group];
      continue;
    }
    auto r = records_from(s.tournament, s.subject);
    auto& dst = by_group[s.group];
    // Mesh ids are only unique within a group.
    for (auto& rec : r) dst.push_back(rec);
  }
  json out = {{"groups", json::array()}};
  std::vector<AnnotationRecord> all;
  for (const auto& [group, records] : by_group) {
    const auto agg = aggregate_dataset(records);
    json j = agg.to_json();
    j["group"] = group;
    j["incomplete_sessions"] = incomplete[group];
    out["groups"].push_back(j);
    for (auto rec : records) {
      rec.mesh = group + "/" + rec.mesh;
      all.push_back(rec);
    }
  }
  if (!all.empty()) {
    json overall = aggregate_dataset(all).to_json();
    overall.erase("meshes");
    out["overall"] = overall;
  } else {
    out["overall"] = nullptr;
  }
  return out;
}

// ---------------------------------------------------------------- HTTP

struct AnnotationServer::Impl {
  SessionManager& manager;
  httplib::Server server;
  std::thread thread;

  explicit Impl(SessionManager& m) : manager(m) { routes(); }

  static void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  template <typename F>
  static void guarded(httplib::Response& res, F&& body) {
    try {
      body();
    } catch (const NotFoundError& e) {
      send_json(res, 404, {{"error", e.what()}});
    } catch (const InvalidWinnerError& e) {
      send_json(res, 400, {{"error", e.what()}});
    } catch (const ProtocolError& e) {
      send_json(res, 409, {{"error", e.what()}});
    } catch (const json::exception& e) {
      send_json(res, 400, {{"error", std::string("bad request: ") + e.what()}});
    } catch (const std::invalid_argument& e) {
      send_json(res, 400, {{"error", e.what()}});
    } catch (const std::exception& e) {
      send_json(res, 500, {{"error", e.what()}});
    }
  }

  static std::string content_type_for(const std::filesystem::path& p) {
    const auto ext = p.extension().string();
    if (ext == ".ply") return "application/octet-stream";
    if (ext == ".obj") return "text/plain";
    return "application/octet-stream";
  }

  void routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    server.Post("/api/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const json body = json::parse(req.body);
        send_json(res, 201,
                  manager.create_session(body.at("subject").get<std::string>(), body.at("group").get<std::string>()));
      });
    });
    server.Get(R"(/api/sessions/([^/]+)/next)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 200, manager.next_pair(req.matches[1])); });
    });
    server.Post(R"(/api/sessions/([^/]+)/vote)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const json body = json::parse(req.body);
        send_json(res, 200,
                  manager.post_vote(req.matches[1], body.at("left").get<std::string>(),
                                    body.at("right").get<std::string>(), body.at("winner").get<std::string>()));
      });
    });
    server.Get("/api/groups", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 200, manager.groups()); });
    });
    server.Get(R"(/api/export/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 200, manager.export_group(req.matches[1])); });
    });
    server.Get(R"(/meshes/([^/]+)/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto path = manager.mesh_path(req.matches[1], req.matches[2]);
        std::ifstream in(path, std::ios::binary);
        if (!in) throw NotFoundError("mesh file missing: " + path.filename().string());
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        res.status = 200;
        res.set_content(std::move(bytes), content_type_for(path));
      });
    });
  }
};

AnnotationServer::AnnotationServer(SessionManager& manager) : impl_(std::make_unique<Impl>(manager)) {}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::start(const ServerConfig& config) {
  int port = config.port;
  if (port == 0) {
    port = impl_->server.bind_to_any_port(config.host);
  } else if (!impl_->server.bind_to_port(config.host, port)) {
    port = -1;
  }
  if (port < 0) throw IoError("cannot bind " + config.host + ":" + std::to_string(config.port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void AnnotationServer::run(const ServerConfig& config) {
  if (!impl_->server.listen(config.host, config.port)) {
    throw IoError("cannot listen on " + config.host + ":" + std::to_string(config.port));
  }
}

void AnnotationServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace tge
