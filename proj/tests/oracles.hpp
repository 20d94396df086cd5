#pragma once

// Brute-force reference implementations used to cross-check the library.
// Each one is written from the definition and shares no code with src/.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <tuple>
#include <vector>

#include "tge/autodiff.hpp"
#include "tge/mesh.hpp"
#include "tge/rng.hpp"
#include "tge/vec3.hpp"

namespace oracle {

using tge::Vec3;

inline double dist(const Vec3& a, const Vec3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

inline double dist2(const Vec3& a, const Vec3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

/// (index, distance) of all points sorted by (squared distance, index).
inline std::vector<std::pair<std::uint32_t, double>> sorted_scan(const std::vector<Vec3>& pts, const Vec3& q) {
  std::vector<std::tuple<double, std::uint32_t>> all;
  for (std::uint32_t i = 0; i < pts.size(); ++i) all.emplace_back(dist2(pts[i], q), i);
  std::sort(all.begin(), all.end());
  std::vector<std::pair<std::uint32_t, double>> out;
  for (const auto& [d2, i] : all) out.emplace_back(i, std::sqrt(d2));
  return out;
}

inline std::vector<std::pair<std::uint32_t, double>> knn(const std::vector<Vec3>& pts, const Vec3& q, std::size_t k) {
  auto all = sorted_scan(pts, q);
  all.resize(k);
  return all;
}

inline std::vector<std::uint32_t> ball(const std::vector<Vec3>& pts, const Vec3& c, double r, std::size_t max_k) {
  std::vector<std::uint32_t> out;
  for (const auto& [i, d] : sorted_scan(pts, c)) {
    if (dist2(pts[i], c) <= r * r && out.size() < max_k) out.push_back(i);
  }
  if (out.empty()) out.push_back(sorted_scan(pts, c).front().first);
  return out;
}

inline double min_dist2(const Vec3& p, const std::vector<Vec3>& set) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : set) best = std::min(best, dist2(p, s));
  return best;
}

inline std::size_t nearest_index(const Vec3& p, const std::vector<Vec3>& set) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < set.size(); ++i) {
    if (dist2(p, set[i]) < dist2(p, set[best])) best = i;
  }
  return best;
}

inline double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  double sa = 0.0, sb = 0.0;
  for (const auto& p : a) sa += min_dist2(p, b);
  for (const auto& p : b) sb += min_dist2(p, a);
  return 0.5 * (sa / a.size() + sb / b.size());
}

inline std::size_t count_within(const std::vector<Vec3>& a, const std::vector<Vec3>& b, double tau) {
  std::size_t c = 0;
  for (const auto& p : a) c += std::sqrt(min_dist2(p, b)) <= tau ? 1 : 0;
  return c;
}

inline double fscore(const std::vector<Vec3>& a, const std::vector<Vec3>& b, double tau) {
  const double p = static_cast<double>(count_within(a, b, tau)) / a.size();
  const double r = static_cast<double>(count_within(b, a, tau)) / b.size();
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

inline double uhd(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  double m = 0.0;
  for (const auto& p : a) m = std::max(m, std::sqrt(min_dist2(p, b)));
  return m;
}

inline double normal_difference(const std::vector<Vec3>& pa, const std::vector<Vec3>& na, const std::vector<Vec3>& pb,
                                const std::vector<Vec3>& nb) {
  auto one_way = [](const std::vector<Vec3>& p, const std::vector<Vec3>& n, const std::vector<Vec3>& q,
                    const std::vector<Vec3>& m) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const auto j = nearest_index(p[i], q);
      const double c = n[i].x * m[j].x + n[i].y * m[j].y + n[i].z * m[j].z;
      s += 1.0 - std::fabs(c);
    }
    return s / p.size();
  };
  return 0.5 * (one_way(pa, na, pb, nb) + one_way(pb, nb, pa, na));
}

/// Point-segment distance by clamped projection.
inline double segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab{b.x - a.x, b.y - a.y, b.z - a.z};
  const double len2 = ab.x * ab.x + ab.y * ab.y + ab.z * ab.z;
  double t = len2 > 0 ? ((p.x - a.x) * ab.x + (p.y - a.y) * ab.y + (p.z - a.z) * ab.z) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return dist(p, Vec3{a.x + t * ab.x, a.y + t * ab.y, a.z + t * ab.z});
}

/// Point-triangle distance: plane projection when it lands inside (barycentric
/// sign test), otherwise the closest of the three edges.
inline double triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 u{b.x - a.x, b.y - a.y, b.z - a.z};
  const Vec3 v{c.x - a.x, c.y - a.y, c.z - a.z};
  const Vec3 n{u.y * v.z - u.z * v.y, u.z * v.x - u.x * v.z, u.x * v.y - u.y * v.x};
  const double nn = n.x * n.x + n.y * n.y + n.z * n.z;
  if (nn > 0) {
    const double h = ((p.x - a.x) * n.x + (p.y - a.y) * n.y + (p.z - a.z) * n.z) / nn;
    const Vec3 q{p.x - h * n.x, p.y - h * n.y, p.z - h * n.z};
    auto side = [&](const Vec3& s, const Vec3& e) {
      const Vec3 se{e.x - s.x, e.y - s.y, e.z - s.z};
      const Vec3 sq{q.x - s.x, q.y - s.y, q.z - s.z};
      const Vec3 x{se.y * sq.z - se.z * sq.y, se.z * sq.x - se.x * sq.z, se.x * sq.y - se.y * sq.x};
      return x.x * n.x + x.y * n.y + x.z * n.z;
    };
    if (side(a, b) >= 0 && side(b, c) >= 0 && side(c, a) >= 0) return dist(p, q);
  }
  return std::min({segment_distance(p, a, b), segment_distance(p, b, c), segment_distance(p, c, a)});
}

inline double p2s(const std::vector<Vec3>& pts, const tge::ColoredMesh& mesh) {
  double s = 0.0;
  for (const auto& p : pts) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& f : mesh.faces) {
      best = std::min(best, triangle_distance(p, mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]));
    }
    s += best;
  }
  return s / pts.size();
}

/// Grid convention: union bbox, cubic side = max extent, res-1 voxels span it,
/// centered. Returns {origin, voxel}.
inline std::pair<Vec3, double> grid_of(const tge::ColoredMesh& a, const tge::ColoredMesh& b, int res) {
  Vec3 lo = a.vertices[0], hi = a.vertices[0];
  for (const auto* m : {&a, &b}) {
    for (const auto& v : m->vertices) {
      for (int k = 0; k < 3; ++k) {
        lo[k] = std::min(lo[k], v[k]);
        hi[k] = std::max(hi[k], v[k]);
      }
    }
  }
  const double side = std::max({hi.x - lo.x, hi.y - lo.y, hi.z - lo.z});
  const double voxel = side / (res - 1);
  const Vec3 center = (lo + hi) * 0.5;
  const double half = 0.5 * voxel * res;
  return {center - Vec3{half, half, half}, voxel};
}

/// Dense boolean voxelizer over a grid with the given origin/voxel size.
inline std::vector<char> voxelize(const std::vector<Vec3>& pts, const Vec3& origin, double voxel, int res) {
  std::vector<char> grid(static_cast<std::size_t>(res) * res * res, 0);
  for (const auto& p : pts) {
    int c[3];
    const double rel[3] = {(p.x - origin.x) / voxel, (p.y - origin.y) / voxel, (p.z - origin.z) / voxel};
    for (int k = 0; k < 3; ++k) c[k] = std::clamp(static_cast<int>(std::floor(rel[k])), 0, res - 1);
    grid[c[0] + res * (c[1] + res * c[2])] = 1;
  }
  return grid;
}

inline std::pair<std::size_t, std::size_t> inter_union(const std::vector<char>& a, const std::vector<char>& b) {
  std::size_t i = 0, u = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    i += (a[k] && b[k]) ? 1 : 0;
    u += (a[k] || b[k]) ? 1 : 0;
  }
  return {i, u};
}

// ---------------------------------------------------------------- statistics

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

/// Average rank: 1 + #smaller + (#equal - 1) / 2.
inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double w : v) {
      less += w < v[i] ? 1 : 0;
      equal += w == v[i] ? 1 : 0;
    }
    r[i] = 1.0 + less + (equal - 1.0) / 2.0;
  }
  return r;
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson(ranks(x), ranks(y));
}

/// Hard Spearman by the 6 sum d^2 shortcut (distinct values only).
inline double spearman_shortcut(const std::vector<double>& x, const std::vector<double>& y) {
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double d2 = 0;
  for (std::size_t i = 0; i < x.size(); ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

/// Kendall tau-b by explicit pair enumeration.
inline double kendall_b(const std::vector<double>& x, const std::vector<double>& y) {
  double conc = 0, disc = 0, tx = 0, ty = 0, n0 = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      n0 += 1;
      const double dx = x[i] - x[j], dy = y[i] - y[j];
      if (dx == 0) tx += 1;
      if (dy == 0) ty += 1;
      if (dx * dy > 0) conc += 1;
      if (dx * dy < 0) disc += 1;
    }
  }
  return (conc - disc) / std::sqrt((n0 - tx) * (n0 - ty));
}

inline double sample_std(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m += x;
  m /= v.size();
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / (v.size() - 1));
}

// ---------------------------------------------------------------- gradients

/// Relative error with a floor on the denominator so entries whose true
/// gradient is ~0 are compared absolutely.
inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

/// Maximum relative error between reverse-mode gradients and central
/// differences for `f` over the given leaves. `f` must rebuild its graph on
/// every call. `max_entries` limits the probed entries per leaf (0 = all).
inline double gradient_check(const std::function<tge::ad::Tensor()>& f, std::vector<tge::ad::Tensor> leaves,
                             double step = 1e-5, std::size_t max_entries = 0, std::uint64_t seed = 1,
                             double floor = 1e-6) {
  std::vector<std::vector<double>> analytic;
  {
    tge::ad::Tape tape;
    for (auto& l : leaves) l.zero_grad();
    auto loss = f();
    tape.backward(loss);
    for (auto& l : leaves) {
      auto g = l.grad();
      analytic.emplace_back(g.begin(), g.end());
      if (analytic.back().empty()) analytic.back().assign(l.numel(), 0.0);
    }
  }
  tge::Rng rng(seed);
  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto values = leaves[li].mutable_values();
    std::vector<std::size_t> entries;
    if (max_entries == 0 || max_entries >= values.size()) {
      for (std::size_t i = 0; i < values.size(); ++i) entries.push_back(i);
    } else {
      for (std::size_t k = 0; k < max_entries; ++k) entries.push_back(rng.below(values.size()));
    }
    for (std::size_t i : entries) {
      const double saved = values[i];
      double up, down;
      {
        tge::ad::NoGradGuard guard;
        values[i] = saved + step;
        up = f().item();
        values[i] = saved - step;
        down = f().item();
      }
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      worst = std::max(worst, rel_error(analytic[li][i], numeric, floor));
    }
  }
  return worst;
}

inline std::vector<double> random_vector(tge::Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline std::vector<Vec3> random_points(tge::Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<Vec3> v(n);
  for (auto& p : v) p = {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
  return v;
}

}  // namespace oracle
