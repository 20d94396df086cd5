#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tge/error.hpp"

namespace tge {

/// The voted pair is not pending in the current round.
class StalePairError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

/// The pair was already decided.
class DuplicateVoteError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

/// The winner is not one of the two participants.
class InvalidWinnerError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

struct Pairing {
  std::string left;
  std::string right;

  bool involves(const std::string& id) const { return left == id || right == id; }
  /// Same two participants, in either order.
  bool same_pair(const std::string& a, const std::string& b) const {
    return (left == a && right == b) || (left == b && right == a);
  }
  friend bool operator==(const Pairing&, const Pairing&) = default;
};

struct Vote {
  std::string session;
  std::size_t round = 0;  // 1-based; 0 means "current round"
  std::string left;
  std::string right;
  std::string winner;
  std::string timestamp;
  std::string subject;

  nlohmann::json to_json() const;
  static Vote from_json(const nlohmann::json& j);
};

struct RoundPlan {
  std::vector<Pairing> pairings;
  std::optional<std::string> bye;
};

struct Round {
  RoundPlan plan;
  std::vector<std::optional<std::string>> winners;  // parallel to plan.pairings

  bool closed() const;
};

/// Swiss tournament over the distorted meshes of one object group.
/// Round r+1 is planned as soon as round r closes.
class Tournament {
 public:
  Tournament(std::vector<std::string> participants, std::size_t rounds_total = 6);

  const std::vector<std::string>& participants() const { return participants_; }
  std::size_t rounds_total() const { return rounds_total_; }
  std::size_t rounds_completed() const;
  bool complete() const { return rounds_completed() == rounds_total_; }
  /// 1-based index of the round being played; rounds_total + 1 once complete.
  std::size_t current_round() const { return complete() ? rounds_total_ + 1 : rounds_.size(); }

  std::size_t wins(const std::string& id) const;
  const std::map<std::string, std::size_t>& win_table() const { return wins_; }
  const std::vector<Round>& rounds() const { return rounds_; }
  /// Unresolved pairings of the current round, in pairing order.
  std::vector<Pairing> pending() const;
  bool have_played(const std::string& a, const std::string& b) const;
  std::size_t byes(const std::string& id) const;

  /// Applies one vote. Throws ProtocolError (state unchanged) when the pair is
  /// not pending in the current round, was already decided, or the winner is
  /// not one of the pair.
  void record_result(const Vote& vote);

  /// wins / rounds_total per participant. Requires a complete tournament.
  std::map<std::string, double> final_scores() const;

  nlohmann::json to_json() const;
  static Tournament from_json(const nlohmann::json& j);

 private:
  Tournament() = default;
  void plan_next_round();

  std::vector<std::string> participants_;
  std::size_t rounds_total_ = 6;
  std::vector<Round> rounds_;
  std::map<std::string, std::size_t> wins_;
};

/// Pairings for the next round: participants sorted by (wins desc, id asc);
/// with an odd count the lowest-ranked participant without a bye sits out.
/// Pairs are formed in rank order, each taking the nearest-ranked partner it
/// has not met yet; when no rematch-free pairing exists, rematches are allowed.
RoundPlan next_pairings(const Tournament& t);

struct OutlierResult {
  std::vector<double> kept;
  std::vector<double> removed;
  double q1 = 0.0;
  double q3 = 0.0;
  double lower_fence = 0.0;
  double upper_fence = 0.0;
  std::string quartile_method = "linear";
  bool flagged_too_few = false;  // fewer than 4 scores: nothing removed
};

/// Quantile by linear interpolation between order statistics at position (n-1)p.
double quantile_linear(std::vector<double> values, double p);

/// Removes scores outside [Q1 - 1.5 IQR, Q3 + 1.5 IQR].
OutlierResult remove_outliers(const std::vector<double>& scores);

inline constexpr double kZ95 = 1.96;

/// z * sigma / sqrt(n).
double ci_half_width(double sigma, std::size_t n, double z = kZ95);
/// ci_half_width with the sample standard deviation (n - 1 denominator). Requires n >= 2.
double confidence_interval(const std::vector<double>& scores, double z = kZ95);

struct AnnotationRecord {
  std::string mesh;
  std::string subject;
  double score = 0.0;
  bool outlier = false;
};

struct MeshAggregate {
  std::string mesh;
  double mean = 0.0;  // over kept scores
  std::size_t n_total = 0;
  std::size_t n_kept = 0;
  std::optional<double> ci_before;  // undefined with a single subject
  std::optional<double> ci_after;
  bool too_few_for_outliers = false;
};

struct DatasetAggregate {
  std::vector<MeshAggregate> meshes;  // sorted by mesh id
  std::optional<double> mean_ci_before;
  std::optional<double> mean_ci_after;
  double removal_fraction = 0.0;
  std::size_t total = 0;
  std::size_t removed = 0;
  /// Records with outlier flags set.
  std::vector<AnnotationRecord> records;

  nlohmann::json to_json() const;
};

/// Per-mesh means after IQR removal plus before/after confidence intervals.
DatasetAggregate aggregate_dataset(const std::vector<AnnotationRecord>& records);

/// One record per participant of a completed tournament.
std::vector<AnnotationRecord> records_from(const Tournament& t, const std::string& subject);

}  // namespace tge
