#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tge/mesh.hpp"

namespace tge {

enum class Orientation { kHigherBetter, kLowerBetter };

struct MetricResult {
  std::string name;
  double value = 0.0;
  Orientation orientation = Orientation::kLowerBetter;
  std::map<std::string, nlohmann::json> params;

  /// `{metric, value, orientation, params}`
  nlohmann::json to_json() const;
};

/// 0.5 * (mean_a min_b |a-b|² + mean_b min_a |a-b|²). Squared convention.
double chamfer(const ColoredPointCloud& a, const ColoredPointCloud& b);

/// 2PR/(P+R) with precision = fraction of a within tau of b, recall the reverse.
double fscore(const ColoredPointCloud& a, const ColoredPointCloud& b, double tau);

/// max over a of the distance to the nearest point of b (input → reference).
double uhd(const ColoredPointCloud& a, const ColoredPointCloud& b);

/// Mean over a of (1 - |cos|) against the nearest neighbor's normal in b,
/// averaged with the b → a direction.
double normal_difference(const ColoredPointCloud& a, const ColoredPointCloud& b);

/// Mean exact point-to-triangle distance from each point to the reference surface.
double p2s(const ColoredPointCloud& points, const ColoredMesh& reference);

/// Closest point on triangle (a, b, c) to p.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Cubic voxel grid covering both shapes.
struct VoxelGrid {
  Vec3 origin;
  double voxel = 1.0;
  int resolution = 8;

  /// Index of the voxel holding p, clamped into the grid.
  std::array<int, 3> cell(const Vec3& p) const;
};

/// Grid enclosing the union bounding box of both meshes, padded by half a voxel.
VoxelGrid shared_grid(const ColoredMesh& a, const ColoredMesh& b, int resolution);

/// Surface sample count used for voxel occupancy: proportional to resolution².
std::size_t occupancy_sample_count(const ColoredMesh& mesh, const VoxelGrid& grid, double samples_per_cell);

/// Occupied voxel ids (x + res*(y + res*z)), sorted and unique.
std::vector<std::uint32_t> surface_occupancy(const ColoredMesh& mesh, const VoxelGrid& grid,
                                             std::uint64_t seed, double samples_per_cell = 16.0);

/// Surface-shell IoU |A∩B|/|A∪B| on a shared grid.
double iou_voxel(const ColoredMesh& a, const ColoredMesh& b, int resolution, std::uint64_t seed = 0,
                 double samples_per_cell = 16.0);

struct MetricConfig {
  std::size_t points = 4096;
  std::uint64_t seed = 0;
  int iou_resolution = 64;
  double iou_samples_per_cell = 16.0;
  /// F-score threshold as a fraction of the reference bounding-box diagonal.
  double fscore_fraction = 0.01;
  /// Subset of {cd, iou, fscore, p2s, nd, uhd}; empty means all six.
  std::vector<std::string> metrics;
};

const std::vector<std::string>& metric_names();
Orientation metric_orientation(const std::string& name);

/// Normalizes both meshes with the reference's transform, samples both, and
/// evaluates the requested metrics.
std::vector<MetricResult> run_all(const ColoredMesh& input, const ColoredMesh& reference,
                                  const MetricConfig& config);

}  // namespace tge
