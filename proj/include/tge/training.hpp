#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tge/autodiff.hpp"
#include "tge/error.hpp"
#include "tge/manifest.hpp"
#include "tge/model.hpp"
#include "tge/stats.hpp"

namespace tge {

struct LossWeights {
  double smooth = 1.0;
  double plcc = 0.2;
  double srocc = 0.2;
};

/// Mean elementwise Smooth L1 (threshold 1) of pred - label. Shapes must match.
ad::Tensor smooth_l1(const ad::Tensor& pred, std::span<const double> label);

/// 1 - Pearson(pred, label). Requires n >= 3 and non-constant labels; when the
/// prediction variance is below 1e-12 a small epsilon keeps it finite.
ad::Tensor plcc_loss(const ad::Tensor& pred, std::span<const double> label);

/// soft_rank_i = 1 + sum_{j != i} sigmoid((v_i - v_j) / temperature), n x 1.
ad::Tensor soft_rank(const ad::Tensor& values, double temperature);

/// 6 * sum (R(pred) - R(label))^2 / (n (n^2 - 1)), with R the soft rank at
/// `temperature` applied to both vectors.
ad::Tensor srocc_loss(const ad::Tensor& pred, std::span<const double> label, double temperature);

struct HybridLoss {
  ad::Tensor total;
  double smooth = 0.0;
  double plcc = 0.0;
  double srocc = 0.0;
  bool plcc_skipped = false;  // constant labels: correlation undefined
};

HybridLoss hybrid_loss(const ad::Tensor& pred, std::span<const double> label, const LossWeights& weights,
                       double temperature);

struct TrainConfig {
  std::size_t epochs = 300;
  std::size_t batch_size = 3;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  LossWeights weights;
  double temperature = 0.1;
  std::size_t temperature_halving_epochs = 100;  // 0 disables annealing
  /// Correlation losses over the last k batches (1 = per batch).
  std::size_t accumulation_window = 1;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // epochs; 0 disables
  std::filesystem::path checkpoint_dir;
  /// Stop once train-set SROCC reaches this value (disabled when unset).
  std::optional<double> target_srocc;
  /// Stop when train-set SROCC has not improved for this many epochs (0 disables).
  std::size_t plateau_patience = 50;
  /// Train-set correlation is evaluated every this many epochs.
  std::size_t eval_every = 1;

  void validate() const;
  nlohmann::json to_json() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double smooth = 0.0;
  double plcc = 0.0;
  double srocc = 0.0;
  double temperature = 0.0;
  std::optional<double> train_plcc;
  std::optional<double> train_srocc;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;
};

/// One training example: a prepared (input, reference) cloud pair with label.
struct TrainPair {
  std::string id;
  std::string object;
  ColoredPointCloud input;
  ColoredPointCloud reference;
  double label = 0.0;
};

/// Loads and samples every scored pair of `manifest` (each mesh sampled once).
std::vector<TrainPair> prepare_pairs(const Manifest& manifest, const TgeConfig& model,
                                     const std::vector<std::string>& objects = {});

struct TrainResult {
  TgeParams params;
  std::vector<EpochLog> log;
  std::string stop_reason;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Thrown when a batch produces a non-finite loss. Lists the batch ids.
class NonFiniteLossError : public Error {
 public:
  using Error::Error;
};

TrainResult train(const std::vector<TrainPair>& pairs, const TrainConfig& config, const TgeConfig& model,
                  const EpochCallback& on_epoch = {});

/// Scores of `pairs` under `params` (no gradient).
std::vector<double> predict_pairs(const std::vector<TrainPair>& pairs, const TgeParams& params);

/// Cross-validation scorer that trains a fresh model on the other objects per fold.
Scorer training_scorer(const TrainConfig& config, const TgeConfig& model);

struct DistortionSpec {
  double max_vertex_jitter = 0.03;  // fraction of the bounding-box diagonal
  double max_color_jitter = 0.25;
  double max_face_drop = 0.3;  // fraction of faces removed at level 1
};

/// Writes distorted copies of each reference into `out_dir` and returns the
/// manifest. Level l in [0, 1] scales every distortion; label = 1 - l.
Manifest make_synthetic_dataset(const std::vector<ColoredMesh>& references, const std::vector<double>& levels,
                                std::uint64_t seed, const std::filesystem::path& out_dir,
                                const DistortionSpec& spec = {});

/// Distorted copy at `level`; level 0 returns the mesh unchanged.
ColoredMesh distort_mesh(const ColoredMesh& mesh, double level, std::uint64_t seed, const DistortionSpec& spec = {});

}  // namespace tge
