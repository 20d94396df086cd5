#include "tge/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <stdexcept>

#include "tge/rng.hpp"

namespace tge {

namespace {

constexpr std::uint32_t kLeafSize = 8;

// Orders candidates as a brute-force scan would: by distance, then index.
struct Candidate {
  double d2;
  std::uint32_t index;
  bool operator<(const Candidate& o) const { return d2 < o.d2 || (d2 == o.d2 && index < o.index); }
};

}  // namespace

KdTree::KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  if (points_.empty()) throw std::invalid_argument("KdTree: empty point set");
  if (points_.size() > std::numeric_limits<std::uint32_t>::max() / 2) {
    throw std::invalid_argument("KdTree: too many points");
  }
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  nodes_.reserve(2 * points_.size() / kLeafSize + 2);
  build(0, static_cast<std::uint32_t>(order_.size()));
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back({begin, end, -1, -1, -1, 0.0});
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = points_[order_[begin]];
  Vec3 hi = lo;
  for (auto i = begin; i < end; ++i) {
    const auto& p = points_[order_[i]];
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  }
  int axis = 0;
  for (int a = 1; a < 3; ++a) {
    if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;
  }
  if (hi[axis] == lo[axis]) return id;  // all coincident: keep as a leaf

  const auto mid = begin + (end - begin) / 2;
  // Deterministic: ties in the coordinate are ordered by index.
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double pa = points_[a][axis];
                     const double pb = points_[b][axis];
                     return pa < pb || (pa == pb && a < b);
                   });
  const double split = points_[order_[mid]][axis];
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  const auto left = build(begin, mid);
  const auto right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

std::vector<Neighbor> KdTree::nearest(const Vec3& query, std::size_t k) const {
  if (k < 1 || k > points_.size()) throw std::invalid_argument("KdTree::nearest: k must be in [1, n]");
  std::priority_queue<Candidate> heap;  // max-heap: worst candidate on top

  // Left subtree holds coordinates <= split, right holds >= split.
  auto visit = [&](auto&& self, std::int32_t id) -> void {
    const Node& node = nodes_[id];
    if (node.axis < 0) {
      for (auto i = node.begin; i < node.end; ++i) {
        const Candidate c{squared_distance(points_[order_[i]], query), order_[i]};
        if (heap.size() < k) {
          heap.push(c);
        } else if (c < heap.top()) {
          heap.pop();
          heap.push(c);
        }
      }
      return;
    }
    const double diff = query[node.axis] - node.split;
    const std::int32_t near = diff <= 0.0 ? node.left : node.right;
    const std::int32_t far = diff <= 0.0 ? node.right : node.left;
    self(self, near);
    // Equality is not pruned: an equidistant point with a lower index may live there.
    if (heap.size() < k || diff * diff <= heap.top().d2) self(self, far);
  };
  visit(visit, 0);

  std::vector<Neighbor> out(heap.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = {heap.top().index, std::sqrt(heap.top().d2)};
    heap.pop();
  }
  return out;
}

std::pair<std::uint32_t, double> KdTree::nearest_one_sq(const Vec3& query) const {
  Candidate best{std::numeric_limits<double>::infinity(), std::numeric_limits<std::uint32_t>::max()};
  auto visit = [&](auto&& self, std::int32_t id) -> void {
    const Node& node = nodes_[id];
    if (node.axis < 0) {
      for (auto i = node.begin; i < node.end; ++i) {
        const Candidate c{squared_distance(points_[order_[i]], query), order_[i]};
        if (c < best) best = c;
      }
      return;
    }
    const double diff = query[node.axis] - node.split;
    self(self, diff <= 0.0 ? node.left : node.right);
    if (diff * diff <= best.d2) self(self, diff <= 0.0 ? node.right : node.left);
  };
  visit(visit, 0);
  return {best.index, best.d2};
}

std::vector<Neighbor> KdTree::within(const Vec3& center, double radius) const {
  const double r2 = radius * radius;
  std::vector<Candidate> found;
  auto visit = [&](auto&& self, std::int32_t id) -> void {
    const Node& node = nodes_[id];
    if (node.axis < 0) {
      for (auto i = node.begin; i < node.end; ++i) {
        const double d2 = squared_distance(points_[order_[i]], center);
        if (d2 <= r2) found.push_back({d2, order_[i]});
      }
      return;
    }
    const double diff = center[node.axis] - node.split;
    self(self, diff <= 0.0 ? node.left : node.right);
    if (diff * diff <= r2) self(self, diff <= 0.0 ? node.right : node.left);
  };
  visit(visit, 0);
  std::sort(found.begin(), found.end());
  std::vector<Neighbor> out;
  out.reserve(found.size());
  for (const auto& c : found) out.push_back({c.index, std::sqrt(c.d2)});
  return out;
}

std::vector<std::uint32_t> ball_query(const KdTree& index, const Vec3& center, double radius,
                                      std::size_t max_k) {
  if (!(radius > 0.0)) throw std::invalid_argument("ball_query: radius must be > 0");
  if (max_k < 1) throw std::invalid_argument("ball_query: max_k must be >= 1");
  auto hits = index.within(center, radius);
  if (hits.empty()) return {index.nearest_one_sq(center).first};
  if (hits.size() > max_k) hits.resize(max_k);
  std::vector<std::uint32_t> out(hits.size());
  std::transform(hits.begin(), hits.end(), out.begin(), [](const Neighbor& n) { return n.index; });
  return out;
}

std::vector<std::uint32_t> farthest_point_sample(std::span<const Vec3> points, std::size_t m,
                                                 std::uint64_t seed) {
  const std::size_t n = points.size();
  if (m < 1 || m > n) throw std::invalid_argument("farthest_point_sample: m must be in [1, n]");
  Rng rng(seed);
  std::vector<std::uint32_t> picks;
  picks.reserve(m);
  picks.push_back(static_cast<std::uint32_t>(rng.below(n)));
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::vector<char> chosen(n, 0);
  chosen[picks[0]] = 1;
  while (picks.size() < m) {
    const Vec3& last = points[picks.back()];
    std::size_t best = n;
    double best_d2 = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (chosen[i]) continue;
      min_d2[i] = std::min(min_d2[i], squared_distance(points[i], last));
      if (min_d2[i] > best_d2) {  // strict: ties keep the lower index
        best_d2 = min_d2[i];
        best = i;
      }
    }
    chosen[best] = 1;
    picks.push_back(static_cast<std::uint32_t>(best));
  }
  return picks;
}

void GroupingSpec::validate() const {
  if (radii.size() != max_samples.size()) throw std::invalid_argument("GroupingSpec: |radii| != |max_samples|");
  if (radii.empty()) throw std::invalid_argument("GroupingSpec: need at least one scale");
  for (double r : radii) {
    if (!(r > 0.0)) throw std::invalid_argument("GroupingSpec: radii must be > 0");
  }
  for (auto k : max_samples) {
    if (k < 1) throw std::invalid_argument("GroupingSpec: max_samples must be >= 1");
  }
  if (centroids < 1) throw std::invalid_argument("GroupingSpec: centroids must be >= 1");
}

Grouping group_points(const KdTree& index, std::span<const Vec3> centers, double radius, std::size_t max_k) {
  Grouping g;
  g.offsets.reserve(centers.size() + 1);
  g.offsets.push_back(0);
  for (const auto& c : centers) {
    const auto members = ball_query(index, c, radius, max_k);
    g.indices.insert(g.indices.end(), members.begin(), members.end());
    g.offsets.push_back(static_cast<std::uint32_t>(g.indices.size()));
  }
  return g;
}

std::vector<std::uint32_t> lexicographic_order(std::span<const Vec3> points, std::span<const Vec3> tie_keys) {
  std::vector<std::uint32_t> order(points.size());
  std::iota(order.begin(), order.end(), 0u);
  auto key_less = [](const Vec3& a, const Vec3& b) {
    if (a.x != b.x) return a.x < b.x;
    if (a.y != b.y) return a.y < b.y;
    return a.z < b.z;
  };
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (key_less(points[a], points[b])) return true;
    if (key_less(points[b], points[a])) return false;
    if (!tie_keys.empty()) return key_less(tie_keys[a], tie_keys[b]);
    return false;
  });
  return order;
}

}  // namespace tge
