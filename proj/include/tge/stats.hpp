#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tge/manifest.hpp"
#include "tge/metrics.hpp"
#include "tge/model.hpp"

namespace tge {

/// Pearson r. Requires n >= 3 and nonzero variance in both inputs.
double plcc(std::span<const double> x, std::span<const double> y);
/// Pearson r of average ranks (ties share their mean rank).
double srocc(std::span<const double> x, std::span<const double> y);
/// Kendall tau-b.
double krocc(std::span<const double> x, std::span<const double> y);

/// 1-based ranks; tied values receive the mean of the ranks they span.
std::vector<double> average_ranks(std::span<const double> v);

struct Correlations {
  double plcc = 0.0;
  double srocc = 0.0;
  double krocc = 0.0;
};

struct FoldResult {
  std::string object;
  Correlations corr;
  std::size_t n = 0;
};

struct SkippedFold {
  std::string object;
  std::size_t n = 0;
  std::string reason;
};

struct EvalReport {
  std::string metric;
  std::vector<FoldResult> folds;
  std::vector<SkippedFold> skipped;
  Correlations mean;
  Correlations std;  // population standard deviation over folds

  /// Recomputes mean/std from `folds`.
  void aggregate();
  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

/// One CSV row per report: metric, one column per held-out object, then
/// Average and Std. `which` is plcc, srocc or krocc. Objects missing from a
/// report are left empty.
std::string correlation_table(std::span<const EvalReport> reports, const std::string& which);

/// Predicts one score per scored distorted entry of `held_out` (in entry
/// order). `training` lists every other object group.
using Scorer =
    std::function<std::vector<double>(const ObjectGroup& held_out, const std::vector<const ObjectGroup*>& training)>;

struct CrossValidationOptions {
  /// Negate predictions of lower-better metrics so every reported
  /// correlation is in the higher-better sense.
  bool negate_lower_better = true;
  Orientation orientation = Orientation::kHigherBetter;
};

/// Leave-one-object-out evaluation. Folds are ordered by object id; folds
/// with fewer than 3 scored samples or degenerate predictions are skipped.
EvalReport cross_validate(const Manifest& manifest, const std::string& metric_name, const Scorer& scorer,
                          const CrossValidationOptions& options = {});

/// Scorer that evaluates one baseline metric on each distorted mesh against its reference.
Scorer metric_scorer(const std::string& metric, const MetricConfig& config);

/// Scorer that applies fixed model parameters (no per-fold training).
Scorer model_scorer(const TgeParams& params);

struct FlopBreakdown {
  double grouped = 0.0;    // per-member PointNet MLPs inside grouping
  double level = 0.0;      // stream projections, FFNs and fusion MLPs on centroids
  double attention = 0.0;  // Q/K/V/O projections, scores and weighted sums
  double final_sa = 0.0;
  double head = 0.0;

  double total() const { return grouped + level + attention + final_sa + head; }
  nlohmann::json to_json() const;
};

/// Analytic FLOPs (2 x multiply-adds) of one input/reference prediction at
/// `n_points`. Centroid counts scale with n_points / config.n_points; groups
/// are counted at their max_samples cap.
FlopBreakdown estimate_flops(const TgeConfig& config, std::size_t n_points);

}  // namespace tge
