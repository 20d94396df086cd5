#include "tge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "tge/error.hpp"
#include "tge/geometry.hpp"

namespace tge {

namespace {

void require_nonempty(const ColoredPointCloud& c, const char* what) {
  if (c.points.empty()) throw std::invalid_argument(std::string(what) + ": empty point cloud");
}

// Sum over `from` of the squared nearest distance into `to`, in input order.
double sum_nn_sq(const ColoredPointCloud& from, const KdTree& to) {
  double sum = 0.0;
  for (const auto& p : from.points) sum += to.nearest_one_sq(p).second;
  return sum;
}

std::size_t count_within(const ColoredPointCloud& from, const KdTree& to, double tau) {
  const double tau2 = tau * tau;
  std::size_t n = 0;
  for (const auto& p : from.points) n += to.nearest_one_sq(p).second <= tau2;
  return n;
}

double directed_normal_difference(const ColoredPointCloud& from, const ColoredPointCloud& to, const KdTree& index) {
  double sum = 0.0;
  for (std::size_t i = 0; i < from.points.size(); ++i) {
    const auto j = index.nearest_one_sq(from.points[i]).first;
    sum += 1.0 - std::abs(dot(from.normals[i], to.normals[j]));
  }
  return sum / static_cast<double>(from.points.size());
}

// ------------------------------------------------------------ triangle BVH

struct Triangle {
  Vec3 a, b, c;
};

double box_distance_sq(const Vec3& p, const Aabb& box) {
  double d2 = 0.0;
  for (int k = 0; k < 3; ++k) {
    double d = 0.0;
    if (p[k] < box.lo[k]) d = box.lo[k] - p[k];
    else if (p[k] > box.hi[k]) d = p[k] - box.hi[k];
    d2 += d * d;
  }
  return d2;
}

class TriangleBvh {
 public:
  explicit TriangleBvh(std::vector<Triangle> tris) : tris_(std::move(tris)) {
    order_.resize(tris_.size());
    std::iota(order_.begin(), order_.end(), 0u);
    centroid_.resize(tris_.size());
    for (std::size_t i = 0; i < tris_.size(); ++i) {
      centroid_[i] = (tris_[i].a + tris_[i].b + tris_[i].c) * (1.0 / 3.0);
    }
    build(0, static_cast<std::uint32_t>(tris_.size()));
  }

  double distance_sq(const Vec3& p) const {
    double best = std::numeric_limits<double>::infinity();
    auto visit = [&](auto&& self, std::int32_t id) -> void {
      const Node& node = nodes_[id];
      if (node.left < 0) {
        for (auto i = node.begin; i < node.end; ++i) {
          const auto& t = tris_[order_[i]];
          best = std::min(best, squared_distance(p, closest_point_on_triangle(p, t.a, t.b, t.c)));
        }
        return;
      }
      const double dl = box_distance_sq(p, nodes_[node.left].box);
      const double dr = box_distance_sq(p, nodes_[node.right].box);
      const auto first = dl <= dr ? node.left : node.right;
      const auto second = dl <= dr ? node.right : node.left;
      if (std::min(dl, dr) < best) self(self, first);
      if (std::max(dl, dr) < best) self(self, second);
    };
    visit(visit, 0);
    return best;
  }

 private:
  struct Node {
    Aabb box;
    std::uint32_t begin, end;
    std::int32_t left = -1, right = -1;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    constexpr double inf = std::numeric_limits<double>::infinity();
    Aabb box{{inf, inf, inf}, {-inf, -inf, -inf}};
    Aabb cbox = box;
    for (auto i = begin; i < end; ++i) {
      const auto& t = tris_[order_[i]];
      for (const Vec3* v : {&t.a, &t.b, &t.c}) {
        for (int k = 0; k < 3; ++k) {
          box.lo[k] = std::min(box.lo[k], (*v)[k]);
          box.hi[k] = std::max(box.hi[k], (*v)[k]);
        }
      }
      for (int k = 0; k < 3; ++k) {
        cbox.lo[k] = std::min(cbox.lo[k], centroid_[order_[i]][k]);
        cbox.hi[k] = std::max(cbox.hi[k], centroid_[order_[i]][k]);
      }
    }
    nodes_.push_back({box, begin, end});
    if (end - begin <= 4) return id;
    int axis = 0;
    for (int k = 1; k < 3; ++k) {
      if (cbox.hi[k] - cbox.lo[k] > cbox.hi[axis] - cbox.lo[axis]) axis = k;
    }
    const auto mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) {
                       const double ca = centroid_[a][axis];
                       const double cb = centroid_[b][axis];
                       return ca < cb || (ca == cb && a < b);
                     });
    const auto left = build(begin, mid);
    const auto right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  std::vector<Triangle> tris_;
  std::vector<std::uint32_t> order_;
  std::vector<Vec3> centroid_;
  std::vector<Node> nodes_;
};

}  // namespace

nlohmann::json MetricResult::to_json() const {
  nlohmann::json p = nlohmann::json::object();
  for (const auto& [k, v] : params) p[k] = v;
  return {{"metric", name},
          {"value", value},
          {"orientation", orientation == Orientation::kHigherBetter ? "higher_better" : "lower_better"},
          {"params", p}};
}

double chamfer(const ColoredPointCloud& a, const ColoredPointCloud& b) {
  require_nonempty(a, "chamfer");
  require_nonempty(b, "chamfer");
  const KdTree ta(a.points);
  const KdTree tb(b.points);
  const double ab = sum_nn_sq(a, tb) / static_cast<double>(a.size());
  const double ba = sum_nn_sq(b, ta) / static_cast<double>(b.size());
  return 0.5 * (ab + ba);
}

double fscore(const ColoredPointCloud& a, const ColoredPointCloud& b, double tau) {
  require_nonempty(a, "fscore");
  require_nonempty(b, "fscore");
  if (!(tau > 0.0)) throw std::invalid_argument("fscore: tau must be > 0");
  const KdTree ta(a.points);
  const KdTree tb(b.points);
  const double precision = static_cast<double>(count_within(a, tb, tau)) / static_cast<double>(a.size());
  const double recall = static_cast<double>(count_within(b, ta, tau)) / static_cast<double>(b.size());
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

double uhd(const ColoredPointCloud& a, const ColoredPointCloud& b) {
  require_nonempty(a, "uhd");
  require_nonempty(b, "uhd");
  const KdTree tb(b.points);
  double worst = 0.0;
  for (const auto& p : a.points) worst = std::max(worst, tb.nearest_one_sq(p).second);
  return std::sqrt(worst);
}

double normal_difference(const ColoredPointCloud& a, const ColoredPointCloud& b) {
  require_nonempty(a, "normal_difference");
  require_nonempty(b, "normal_difference");
  if (!a.has_normals() || !b.has_normals()) throw std::invalid_argument("normal_difference: missing normals");
  const KdTree ta(a.points);
  const KdTree tb(b.points);
  return 0.5 * (directed_normal_difference(a, b, tb) + directed_normal_difference(b, a, ta));
}

// Ericson, Real-Time Collision Detection, 5.1.5.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  const Vec3 ap = p - a;
  const double d1 = dot(ab, ap);
  const double d2 = dot(ac, ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;

  const Vec3 bp = p - b;
  const double d3 = dot(ab, bp);
  const double d4 = dot(ac, bp);
  if (d3 >= 0.0 && d4 <= d3) return b;

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + ab * (d1 / (d1 - d3));

  const Vec3 cp = p - c;
  const double d5 = dot(ab, cp);
  const double d6 = dot(ac, cp);
  if (d6 >= 0.0 && d5 <= d6) return c;

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + ac * (d2 / (d2 - d6));

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  }
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

double p2s(const ColoredPointCloud& points, const ColoredMesh& reference) {
  require_nonempty(points, "p2s");
  std::vector<Triangle> tris;
  tris.reserve(reference.faces.size());
  for (const auto& f : reference.faces) {
    const Triangle t{reference.vertices[f[0]], reference.vertices[f[1]], reference.vertices[f[2]]};
    // Zero-area faces carry no surface.
    if (norm(cross(t.b - t.a, t.c - t.a)) > 0.0) tris.push_back(t);
  }
  if (tris.empty()) throw DegenerateGeometryError("p2s: reference has no nondegenerate triangle");
  const TriangleBvh bvh(std::move(tris));
  double sum = 0.0;
  for (const auto& p : points.points) sum += std::sqrt(bvh.distance_sq(p));
  return sum / static_cast<double>(points.size());
}

std::array<int, 3> VoxelGrid::cell(const Vec3& p) const {
  std::array<int, 3> idx{};
  for (int k = 0; k < 3; ++k) {
    const double t = std::floor((p[k] - origin[k]) / voxel);
    idx[k] = static_cast<int>(std::clamp(t, 0.0, static_cast<double>(resolution - 1)));
  }
  return idx;
}

VoxelGrid shared_grid(const ColoredMesh& a, const ColoredMesh& b, int resolution) {
  if (resolution < 8) throw std::invalid_argument("iou_voxel: resolution must be >= 8");
  Aabb box = bounding_box(a.vertices);
  const Aabb bb = bounding_box(b.vertices);
  for (int k = 0; k < 3; ++k) {
    box.lo[k] = std::min(box.lo[k], bb.lo[k]);
    box.hi[k] = std::max(box.hi[k], bb.hi[k]);
  }
  double side = 0.0;
  for (int k = 0; k < 3; ++k) side = std::max(side, box.hi[k] - box.lo[k]);
  if (!(side > 0.0)) throw DegenerateGeometryError("iou_voxel: shapes have zero extent");
  VoxelGrid grid;
  grid.resolution = resolution;
  grid.voxel = side / (resolution - 1);
  const Vec3 center = (box.lo + box.hi) * 0.5;
  const double half = 0.5 * grid.voxel * resolution;
  grid.origin = center - Vec3{half, half, half};
  return grid;
}

std::size_t occupancy_sample_count(const ColoredMesh& mesh, const VoxelGrid& grid, double samples_per_cell) {
  const double n = std::ceil(samples_per_cell * mesh.surface_area() / (grid.voxel * grid.voxel));
  return static_cast<std::size_t>(std::clamp(n, 1.0, 5.0e7));
}

std::vector<std::uint32_t> surface_occupancy(const ColoredMesh& mesh, const VoxelGrid& grid,
                                             std::uint64_t seed, double samples_per_cell) {
  const auto cloud = sample_points(mesh, occupancy_sample_count(mesh, grid, samples_per_cell), seed);
  const auto r = static_cast<std::uint32_t>(grid.resolution);
  std::vector<std::uint32_t> ids;
  ids.reserve(cloud.size());
  for (const auto& p : cloud.points) {
    const auto c = grid.cell(p);
    ids.push_back(static_cast<std::uint32_t>(c[0]) + r * (static_cast<std::uint32_t>(c[1]) + r * static_cast<std::uint32_t>(c[2])));
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

double iou_voxel(const ColoredMesh& a, const ColoredMesh& b, int resolution, std::uint64_t seed,
                 double samples_per_cell) {
  const VoxelGrid grid = shared_grid(a, b, resolution);
  const auto occ_a = surface_occupancy(a, grid, seed, samples_per_cell);
  const auto occ_b = surface_occupancy(b, grid, seed, samples_per_cell);
  std::vector<std::uint32_t> inter;
  std::set_intersection(occ_a.begin(), occ_a.end(), occ_b.begin(), occ_b.end(), std::back_inserter(inter));
  const std::size_t uni = occ_a.size() + occ_b.size() - inter.size();
  if (uni == 0) throw DegenerateGeometryError("iou_voxel: empty union");
  return static_cast<double>(inter.size()) / static_cast<double>(uni);
}

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"cd", "iou", "fscore", "p2s", "nd", "uhd"};
  return names;
}

Orientation metric_orientation(const std::string& name) {
  if (name == "iou" || name == "fscore") return Orientation::kHigherBetter;
  if (name == "cd" || name == "p2s" || name == "nd" || name == "uhd") return Orientation::kLowerBetter;
  throw std::invalid_argument("unknown metric '" + name + "'");
}

std::vector<MetricResult> run_all(const ColoredMesh& input, const ColoredMesh& reference,
                                  const MetricConfig& config) {
  input.validate();
  reference.validate();
  std::vector<std::string> wanted = config.metrics.empty() ? metric_names() : config.metrics;
  for (const auto& w : wanted) metric_orientation(w);  // rejects unknown names

  const NormalizationTransform t = normalization_of(reference);
  const ColoredMesh in_n = apply_transform(input, t);
  const ColoredMesh ref_n = apply_transform(reference, t);

  const bool need_clouds = std::any_of(wanted.begin(), wanted.end(), [](const std::string& w) { return w != "iou"; });
  ColoredPointCloud in_c, ref_c;
  if (need_clouds) {
    in_c = sample_points(in_n, config.points, config.seed, true);
    ref_c = sample_points(ref_n, config.points, config.seed, true);
  }

  std::vector<MetricResult> out;
  for (const auto& name : wanted) {
    MetricResult r;
    r.name = name;
    r.orientation = metric_orientation(name);
    r.params["points"] = config.points;
    r.params["seed"] = config.seed;
    r.params["normalization"] = "reference";
    if (name == "cd") {
      r.value = chamfer(in_c, ref_c);
      r.params["convention"] = "0.5*(mean sq nn a->b + mean sq nn b->a)";
    } else if (name == "iou") {
      r.value = iou_voxel(in_n, ref_n, config.iou_resolution, config.seed, config.iou_samples_per_cell);
      r.params.erase("points");
      r.params["resolution"] = config.iou_resolution;
      r.params["samples_per_cell"] = config.iou_samples_per_cell;
      r.params["occupancy"] = "surface";
    } else if (name == "fscore") {
      const double tau = config.fscore_fraction * bounding_box(ref_n.vertices).diagonal();
      r.value = fscore(in_c, ref_c, tau);
      r.params["tau"] = tau;
      r.params["tau_fraction_of_diagonal"] = config.fscore_fraction;
    } else if (name == "p2s") {
      r.value = p2s(in_c, ref_n);
    } else if (name == "nd") {
      r.value = normal_difference(in_c, ref_c);
      r.params["convention"] = "symmetric mean of 1-|cos|";
    } else if (name == "uhd") {
      r.value = uhd(in_c, ref_c);
      r.params["direction"] = "input->reference";
    }
    if (!std::isfinite(r.value)) throw Error("metric '" + name + "' produced a non-finite value");
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace tge
