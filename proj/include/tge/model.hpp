#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "tge/autodiff.hpp"
#include "tge/mesh.hpp"

namespace tge {

/// One latent-geometry set-abstraction level. Scale s groups up to
/// max_samples[s] neighbors within radii[s] of each centroid.
struct LgsaConfig {
  std::size_t centroids = 1;
  std::vector<double> radii;
  std::vector<std::size_t> max_samples;
  std::vector<std::vector<std::size_t>> geom_mlp_dims;    // per scale
  std::vector<std::vector<std::size_t>> latent_mlp_dims;  // per scale
  std::vector<std::vector<std::size_t>> out_mlp_dims;     // per scale, after fusion
  std::size_t d_emb = 64;
  std::size_t heads = 4;
  std::size_t latent_width = 3;  // d_l, width of the incoming per-point features

  std::size_t scales() const { return radii.size(); }
  /// Sum over scales of the last out-MLP width.
  std::size_t d_out() const;
  void validate() const;
};

enum class ComparisonMode { kConcatDiff, kConcat, kDiff };

/// Architecture ablations. kFull is the complete model.
enum class Variant {
  kFull,
  kNoAttentionNoLatent,  // one PointNet stream over [relative xyz, latent]
  kNoAttention,          // f = l + FFN(l), no attention anywhere
  kNoSelfAttention,      // cross-attention on the projected streams directly
  kNoGeometryFeature,    // out MLP sees f only
};

std::string comparison_mode_name(ComparisonMode mode);
ComparisonMode comparison_mode_from_name(const std::string& name);
std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

inline constexpr std::size_t kLevel1LatentWidth = 3;
inline constexpr std::size_t kLevel2LatentWidth = 256;

struct TgeConfig {
  std::size_t n_points = 1024;
  LgsaConfig level1;
  LgsaConfig level2;
  std::vector<std::size_t> final_mlp_dims;  // final SA PointNet; last entry is final_dim
  std::vector<std::size_t> head_dims{1024, 512, 256};
  ComparisonMode comparison_mode = ComparisonMode::kConcatDiff;
  Variant variant = Variant::kFull;
  /// Lexicographic pre-sort of the input cloud before sampling; makes encode
  /// invariant to input point order.
  bool presort = true;
  std::uint64_t seed = 0;  // drives point sampling and FPS start indices

  std::size_t final_dim() const { return final_mlp_dims.empty() ? 0 : final_mlp_dims.back(); }
  void validate() const;

  nlohmann::json to_json() const;
  static TgeConfig from_json(const nlohmann::json& j);

  /// Two-level multi-scale design at 1024 points.
  static TgeConfig default_config();
  /// Small network for tests, overfit runs and gradient checks.
  static TgeConfig toy_config(std::size_t n_points = 128);
};

/// Hash of everything that determines parameter layout and forward semantics.
std::string architecture_fingerprint(const TgeConfig& config);

struct TgeParams {
  TgeConfig config;
  std::uint64_t init_seed = 0;
  ad::ParameterSet set;

  const ad::Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  std::string fingerprint() const { return architecture_fingerprint(config); }

  /// Rebuilds the name lookup after `set` is replaced.
  void reindex();

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero. Deterministic per seed.
TgeParams init_params(const TgeConfig& config, std::uint64_t seed);

struct LevelOutput {
  std::vector<Vec3> centroids;
  ad::Tensor features;  // centroids x d_out
};

/// One LG-SA level. `level` is 1 or 2; `latent` is n x latent_width.
LevelOutput lgsa_forward(std::span<const Vec3> points, const ad::Tensor& latent, const TgeParams& params,
                         int level);

/// Global feature (1 x final_dim) of a normalized colored cloud.
ad::Tensor encode(const ColoredPointCloud& cloud, const TgeParams& params);

/// Fidelity head: combination per comparison mode, MLP, sigmoid. Returns 1 x 1.
ad::Tensor compare(const ad::Tensor& f_input, const ad::Tensor& f_ref, const TgeParams& params);

/// Combination vector fed to the head (1 x k).
ad::Tensor combine_features(const ad::Tensor& f_input, const ad::Tensor& f_ref, ComparisonMode mode);

/// Normalizes both meshes by the reference transform and samples n_points from each.
std::pair<ColoredPointCloud, ColoredPointCloud> prepare_pair(const ColoredMesh& input, const ColoredMesh& reference,
                                                             const TgeConfig& config);

/// Differentiable score of a prepared pair (1 x 1).
ad::Tensor score_clouds(const ColoredPointCloud& input, const ColoredPointCloud& reference,
                        const TgeParams& params);

/// Fidelity score in (0, 1). Deterministic per (meshes, config, params).
double predict(const ColoredMesh& input, const ColoredMesh& reference, const TgeParams& params);

void save_model(const std::filesystem::path& path, const TgeParams& params);
/// Loads a checkpoint and checks its stored fingerprint against its own config.
TgeParams load_model(const std::filesystem::path& path);
/// As above, and additionally rejects checkpoints built for a different architecture.
TgeParams load_model(const std::filesystem::path& path, const TgeConfig& expected);

}  // namespace tge
