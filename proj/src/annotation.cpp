#include "tge/annotation.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace tge {

using nlohmann::json;

namespace {

constexpr std::size_t kSearchBudget = 200000;

// Rank-ordered matching without rematches. Returns false when none exists or
// the search budget runs out.
bool match_no_rematch(const Tournament& t, std::vector<std::string>& pool, std::vector<Pairing>& out,
                      std::size_t& budget) {
  if (pool.empty()) return true;
  if (budget == 0) return false;
  --budget;
  const std::string first = pool.front();
  for (std::size_t k = 1; k < pool.size(); ++k) {
    if (t.have_played(first, pool[k])) continue;
    const std::string partner = pool[k];
    std::vector<std::string> rest;
    rest.reserve(pool.size() - 2);
    for (std::size_t i = 1; i < pool.size(); ++i) {
      if (i != k) rest.push_back(pool[i]);
    }
    out.push_back({first, partner});
    if (match_no_rematch(t, rest, out, budget)) return true;
    out.pop_back();
    if (budget == 0) return false;
  }
  return false;
}

// Greedy fallback: each participant takes the nearest-ranked unmet partner,
// or the nearest-ranked one when all remaining have been met.
std::vector<Pairing> match_greedy(const Tournament& t, std::vector<std::string> pool) {
  std::vector<Pairing> out;
  while (pool.size() >= 2) {
    std::size_t pick = 1;
    for (std::size_t k = 1; k < pool.size(); ++k) {
      if (!t.have_played(pool[0], pool[k])) {
        pick = k;
        break;
      }
    }
    out.push_back({pool[0], pool[pick]});
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
    pool.erase(pool.begin());
  }
  return out;
}

double sample_std(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / (n - 1.0));
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

// ---------------------------------------------------------------- votes

json Vote::to_json() const {
  return {{"session", session}, {"round", round},         {"left", left},      {"right", right},
          {"winner", winner},   {"timestamp", timestamp}, {"subject", subject}};
}

Vote Vote::from_json(const json& j) {
  Vote v;
  v.session = j.value("session", "");
  v.round = j.value("round", std::size_t{0});
  v.left = j.at("left").get<std::string>();
  v.right = j.at("right").get<std::string>();
  v.winner = j.at("winner").get<std::string>();
  v.timestamp = j.value("timestamp", "");
  v.subject = j.value("subject", "");
  return v;
}

bool Round::closed() const {
  return std::all_of(winners.begin(), winners.end(), [](const auto& w) { return w.has_value(); });
}

// ---------------------------------------------------------------- tournament

Tournament::Tournament(std::vector<std::string> participants, std::size_t rounds_total)
    : participants_(std::move(participants)), rounds_total_(rounds_total) {
  if (participants_.size() < 2) throw std::invalid_argument("Tournament: need at least 2 participants");
  if (rounds_total_ < 1) throw std::invalid_argument("Tournament: rounds_total must be >= 1");
  std::set<std::string> unique(participants_.begin(), participants_.end());
  if (unique.size() != participants_.size()) throw std::invalid_argument("Tournament: duplicate participant ids");
  for (const auto& p : participants_) wins_[p] = 0;
  plan_next_round();
}

std::size_t Tournament::rounds_completed() const {
  std::size_t n = 0;
  for (const auto& r : rounds_) n += r.closed() ? 1 : 0;
  return n;
}

std::size_t Tournament::wins(const std::string& id) const {
  const auto it = wins_.find(id);
  if (it == wins_.end()) throw NotFoundError("unknown participant '" + id + "'");
  return it->second;
}

std::vector<Pairing> Tournament::pending() const {
  std::vector<Pairing> out;
  if (complete() || rounds_.empty()) return out;
  const Round& r = rounds_.back();
  for (std::size_t i = 0; i < r.plan.pairings.size(); ++i) {
    if (!r.winners[i]) out.push_back(r.plan.pairings[i]);
  }
  return out;
}

bool Tournament::have_played(const std::string& a, const std::string& b) const {
  for (const auto& r : rounds_) {
    for (const auto& p : r.plan.pairings) {
      if (p.same_pair(a, b)) return true;
    }
  }
  return false;
}

std::size_t Tournament::byes(const std::string& id) const {
  std::size_t n = 0;
  for (const auto& r : rounds_) n += (r.plan.bye && *r.plan.bye == id) ? 1 : 0;
  return n;
}

void Tournament::plan_next_round() {
  if (rounds_.size() >= rounds_total_) return;
  Round r;
  r.plan = next_pairings(*this);
  r.winners.assign(r.plan.pairings.size(), std::nullopt);
  rounds_.push_back(std::move(r));
}

void Tournament::record_result(const Vote& vote) {
  if (complete()) throw StalePairError("tournament already complete");
  if (vote.round != 0 && vote.round != current_round()) {
    throw StalePairError("vote for round " + std::to_string(vote.round) + " but round " +
                         std::to_string(current_round()) + " is in progress");
  }
  Round& r = rounds_.back();
  std::size_t idx = r.plan.pairings.size();
  for (std::size_t i = 0; i < r.plan.pairings.size(); ++i) {
    if (r.plan.pairings[i].same_pair(vote.left, vote.right)) idx = i;
  }
  if (idx == r.plan.pairings.size()) {
    throw StalePairError("pair (" + vote.left + ", " + vote.right + ") is not in the current round");
  }
  if (r.winners[idx]) throw DuplicateVoteError("pair (" + vote.left + ", " + vote.right + ") already decided");
  if (vote.winner != vote.left && vote.winner != vote.right) {
    throw InvalidWinnerError("winner '" + vote.winner + "' is not part of the pair");
  }
  r.winners[idx] = vote.winner;
  ++wins_[vote.winner];
  if (r.closed()) plan_next_round();
}

std::map<std::string, double> Tournament::final_scores() const {
  if (!complete()) throw ProtocolError("tournament incomplete");
  std::map<std::string, double> out;
  for (const auto& [id, w] : wins_) out[id] = static_cast<double>(w) / static_cast<double>(rounds_total_);
  return out;
}

json Tournament::to_json() const {
  json j;
  j["participants"] = participants_;
  j["rounds_total"] = rounds_total_;
  j["rounds"] = json::array();
  for (const auto& r : rounds_) {
    json jr;
    jr["pairings"] = json::array();
    for (std::size_t i = 0; i < r.plan.pairings.size(); ++i) {
      jr["pairings"].push_back({{"left", r.plan.pairings[i].left},
                                {"right", r.plan.pairings[i].right},
                                {"winner", r.winners[i] ? json(*r.winners[i]) : json(nullptr)}});
    }
    jr["bye"] = r.plan.bye ? json(*r.plan.bye) : json(nullptr);
    j["rounds"].push_back(jr);
  }
  j["wins"] = wins_;
  return j;
}

Tournament Tournament::from_json(const json& j) {
  Tournament t;
  t.participants_ = j.at("participants").get<std::vector<std::string>>();
  t.rounds_total_ = j.at("rounds_total").get<std::size_t>();
  for (const auto& p : t.participants_) t.wins_[p] = 0;
  for (const auto& jr : j.at("rounds")) {
    Round r;
    for (const auto& jp : jr.at("pairings")) {
      r.plan.pairings.push_back({jp.at("left").get<std::string>(), jp.at("right").get<std::string>()});
      if (jp.at("winner").is_null()) {
        r.winners.emplace_back(std::nullopt);
      } else {
        r.winners.emplace_back(jp.at("winner").get<std::string>());
        ++t.wins_[jp.at("winner").get<std::string>()];
      }
    }
    if (!jr.at("bye").is_null()) r.plan.bye = jr.at("bye").get<std::string>();
    t.rounds_.push_back(std::move(r));
  }
  return t;
}

RoundPlan next_pairings(const Tournament& t) {
  if (t.complete()) throw ProtocolError("tournament already complete");
  std::vector<std::string> ranked = t.participants();
  std::sort(ranked.begin(), ranked.end(), [&](const std::string& a, const std::string& b) {
    const auto wa = t.wins(a), wb = t.wins(b);
    return wa != wb ? wa > wb : a < b;
  });

  RoundPlan plan;
  if (ranked.size() % 2 == 1) {
    std::size_t pick = ranked.size() - 1;
    for (std::size_t k = ranked.size(); k-- > 0;) {
      if (t.byes(ranked[k]) == 0) {
        pick = k;
        break;
      }
    }
    plan.bye = ranked[pick];
    ranked.erase(ranked.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  std::size_t budget = kSearchBudget;
  std::vector<std::string> pool = ranked;
  if (!match_no_rematch(t, pool, plan.pairings, budget)) {
    plan.pairings = match_greedy(t, ranked);
  }
  return plan;
}

// ---------------------------------------------------------------- statistics

double quantile_linear(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("quantile_linear: empty input");
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("quantile_linear: p must be in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

OutlierResult remove_outliers(const std::vector<double>& scores) {
  OutlierResult out;
  if (scores.size() < 4) {
    out.kept = scores;
    out.flagged_too_few = true;
    if (!scores.empty()) {
      out.q1 = quantile_linear(scores, 0.25);
      out.q3 = quantile_linear(scores, 0.75);
      out.lower_fence = out.q1 - 1.5 * (out.q3 - out.q1);
      out.upper_fence = out.q3 + 1.5 * (out.q3 - out.q1);
    }
    return out;
  }
  out.q1 = quantile_linear(scores, 0.25);
  out.q3 = quantile_linear(scores, 0.75);
  const double iqr = out.q3 - out.q1;
  out.lower_fence = out.q1 - 1.5 * iqr;
  out.upper_fence = out.q3 + 1.5 * iqr;
  for (double s : scores) {
    (s < out.lower_fence || s > out.upper_fence ? out.removed : out.kept).push_back(s);
  }
  return out;
}

double ci_half_width(double sigma, std::size_t n, double z) {
  if (n < 1) throw std::invalid_argument("ci_half_width: n must be >= 1");
  return z * sigma / std::sqrt(static_cast<double>(n));
}

double confidence_interval(const std::vector<double>& scores, double z) {
  if (scores.size() < 2) throw std::invalid_argument("confidence_interval: need at least 2 scores");
  return ci_half_width(sample_std(scores), scores.size(), z);
}

json DatasetAggregate::to_json() const {
  json j;
  j["meshes"] = json::array();
  for (const auto& m : meshes) {
    j["meshes"].push_back({{"mesh", m.mesh},
                           {"mean", m.mean},
                           {"n_total", m.n_total},
                           {"n_kept", m.n_kept},
                           {"ci_before", optional_json(m.ci_before)},
                           {"ci_after", optional_json(m.ci_after)},
                           {"too_few_for_outliers", m.too_few_for_outliers}});
  }
  j["mean_ci_before"] = optional_json(mean_ci_before);
  j["mean_ci_after"] = optional_json(mean_ci_after);
  j["removal_fraction"] = removal_fraction;
  j["total"] = total;
  j["removed"] = removed;
  j["quartile_method"] = "linear";
  j["z"] = kZ95;
  return j;
}

DatasetAggregate aggregate_dataset(const std::vector<AnnotationRecord>& records) {
  if (records.empty()) throw std::invalid_argument("aggregate_dataset: no records");
  std::map<std::string, std::vector<std::size_t>> by_mesh;
  for (std::size_t i = 0; i < records.size(); ++i) by_mesh[records[i].mesh].push_back(i);

  DatasetAggregate agg;
  agg.records = records;
  double sum_before = 0.0, sum_after = 0.0;
  std::size_t n_before = 0, n_after = 0;
  for (const auto& [mesh, idx] : by_mesh) {
    std::vector<double> scores;
    for (auto i : idx) scores.push_back(records[i].score);
    const OutlierResult res = remove_outliers(scores);
    MeshAggregate m;
    m.mesh = mesh;
    m.n_total = scores.size();
    m.n_kept = res.kept.size();
    m.too_few_for_outliers = res.flagged_too_few;
    double mean = 0.0;
    for (double s : res.kept) mean += s;
    m.mean = mean / static_cast<double>(res.kept.size());
    if (scores.size() >= 2) {
      m.ci_before = confidence_interval(scores);
      sum_before += *m.ci_before;
      ++n_before;
    }
    if (res.kept.size() >= 2) {
      m.ci_after = confidence_interval(res.kept);
      sum_after += *m.ci_after;
      ++n_after;
    }
    for (auto i : idx) {
      const double s = records[i].score;
      agg.records[i].outlier = !res.flagged_too_few && (s < res.lower_fence || s > res.upper_fence);
    }
    agg.total += scores.size();
    agg.removed += res.removed.size();
    agg.meshes.push_back(std::move(m));
  }
  if (n_before > 0) agg.mean_ci_before = sum_before / static_cast<double>(n_before);
  if (n_after > 0) agg.mean_ci_after = sum_after / static_cast<double>(n_after);
  agg.removal_fraction = static_cast<double>(agg.removed) / static_cast<double>(agg.total);
  return agg;
}

std::vector<AnnotationRecord> records_from(const Tournament& t, const std::string& subject) {
  std::vector<AnnotationRecord> out;
  for (const auto& [id, score] : t.final_scores()) out.push_back({id, subject, score, false});
  return out;
}

}  // namespace tge
