#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tge/vec3.hpp"

namespace tge {

struct Neighbor {
  std::uint32_t index = 0;
  double distance = 0.0;  // Euclidean

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Balanced KD-tree over a copy of the input points. Queries return exactly
/// what a brute-force scan would: nondecreasing distance, ties by lower index.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points);

  std::size_t size() const { return points_.size(); }
  const std::vector<Vec3>& points() const { return points_; }

  /// k nearest points; requires 1 <= k <= size().
  std::vector<Neighbor> nearest(const Vec3& query, std::size_t k) const;

  /// Single nearest neighbor (index, squared distance), without allocation.
  std::pair<std::uint32_t, double> nearest_one_sq(const Vec3& query) const;

  /// All points with squared distance <= radius², sorted (distance, index).
  std::vector<Neighbor> within(const Vec3& center, double radius) const;

 private:
  struct Node {
    std::uint32_t begin = 0;  // range into order_
    std::uint32_t end = 0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    int axis = -1;  // -1 for leaves
    double split = 0.0;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

using SpatialIndex = KdTree;

/// Ball query: neighbors within `radius`, nearest-first, truncated at max_k.
/// An empty ball yields the single global nearest point, so groups are never empty.
std::vector<std::uint32_t> ball_query(const KdTree& index, const Vec3& center, double radius,
                                      std::size_t max_k);

/// Greedy farthest point sampling. The start index is drawn from `seed`; each
/// later pick maximizes the min-distance to the chosen set (ties → lower index).
std::vector<std::uint32_t> farthest_point_sample(std::span<const Vec3> points, std::size_t m,
                                                 std::uint64_t seed);

/// Multi-scale grouping layout for one set-abstraction level.
struct GroupingSpec {
  std::vector<double> radii;
  std::vector<std::size_t> max_samples;
  std::size_t centroids = 1;

  void validate() const;
};

/// Groups for one scale, stored flat: members of group g are
/// indices[offsets[g] .. offsets[g+1]).
struct Grouping {
  std::vector<std::uint32_t> indices;
  std::vector<std::uint32_t> offsets;

  std::size_t groups() const { return offsets.empty() ? 0 : offsets.size() - 1; }
};

Grouping group_points(const KdTree& index, std::span<const Vec3> centers, double radius, std::size_t max_k);

/// Stable permutation sorting points lexicographically by (x, y, z, then tie keys).
std::vector<std::uint32_t> lexicographic_order(std::span<const Vec3> points,
                                               std::span<const Vec3> tie_keys = {});

}  // namespace tge
