#include "tge/primitives.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "tge/rng.hpp"

namespace tge {

namespace {

constexpr double kPi = std::numbers::pi;

struct ColorPattern {
  Vec3 freq;
  Vec3 phase;

  explicit ColorPattern(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0xC0102));
    for (int a = 0; a < 3; ++a) {
      freq[a] = rng.uniform(1.0, 4.0);
      phase[a] = rng.uniform(0.0, 2.0 * kPi);
    }
  }

  Vec3 operator()(const Vec3& p) const {
    return {0.5 + 0.45 * std::sin(freq.x * p.x + phase.x + 0.7 * p.y),
            0.5 + 0.45 * std::sin(freq.y * p.y + phase.y + 0.5 * p.z),
            0.5 + 0.45 * std::sin(freq.z * p.z + phase.z + 0.3 * p.x)};
  }
};

// Builds a closed or open (u,v) grid surface; `wrap_u` closes the seam.
ColoredMesh grid_surface(int nu, int nv, bool wrap_u, const auto& position) {
  ColoredMesh mesh;
  const int cols = wrap_u ? nu : nu + 1;
  for (int j = 0; j <= nv; ++j) {
    for (int i = 0; i < cols; ++i) {
      mesh.vertices.push_back(position(static_cast<double>(i) / nu, static_cast<double>(j) / nv));
    }
  }
  auto at = [&](int i, int j) { return static_cast<std::uint32_t>(j * cols + (wrap_u ? i % nu : i)); };
  for (int j = 0; j < nv; ++j) {
    for (int i = 0; i < nu; ++i) {
      mesh.faces.push_back({at(i, j), at(i + 1, j), at(i + 1, j + 1)});
      mesh.faces.push_back({at(i, j), at(i + 1, j + 1), at(i, j + 1)});
    }
  }
  return mesh;
}

void drop_degenerate(ColoredMesh& mesh) {
  std::erase_if(mesh.faces, [&](const Face& f) {
    return norm(cross(mesh.vertices[f[1]] - mesh.vertices[f[0]], mesh.vertices[f[2]] - mesh.vertices[f[0]])) <= 1e-14;
  });
}

}  // namespace

const std::vector<PrimitiveKind>& all_primitive_kinds() {
  static const std::vector<PrimitiveKind> kinds = {PrimitiveKind::kSphere,   PrimitiveKind::kTorus,
                                                   PrimitiveKind::kBox,      PrimitiveKind::kCylinder,
                                                   PrimitiveKind::kCone,     PrimitiveKind::kBumpySphere};
  return kinds;
}

std::string primitive_name(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::kSphere: return "sphere";
    case PrimitiveKind::kTorus: return "torus";
    case PrimitiveKind::kBox: return "box";
    case PrimitiveKind::kCylinder: return "cylinder";
    case PrimitiveKind::kCone: return "cone";
    case PrimitiveKind::kBumpySphere: return "bumpy_sphere";
  }
  return "unknown";
}

PrimitiveKind primitive_from_name(const std::string& name) {
  for (auto k : all_primitive_kinds()) {
    if (primitive_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown primitive '" + name + "'");
}

ColoredMesh make_box(const Vec3& lo, const Vec3& hi, int cells, const Vec3& color) {
  if (cells < 1) throw std::invalid_argument("make_box: cells must be >= 1");
  ColoredMesh mesh;
  mesh.name = "box";
  // Each of the six faces gets its own vertex grid.
  for (int axis = 0; axis < 3; ++axis) {
    for (int side = 0; side < 2; ++side) {
      const int u_axis = (axis + 1) % 3;
      const int v_axis = (axis + 2) % 3;
      const auto base = static_cast<std::uint32_t>(mesh.vertices.size());
      for (int j = 0; j <= cells; ++j) {
        for (int i = 0; i <= cells; ++i) {
          Vec3 p;
          p[axis] = side == 0 ? lo[axis] : hi[axis];
          p[u_axis] = lo[u_axis] + (hi[u_axis] - lo[u_axis]) * i / cells;
          p[v_axis] = lo[v_axis] + (hi[v_axis] - lo[v_axis]) * j / cells;
          mesh.vertices.push_back(p);
          mesh.colors.push_back(color);
        }
      }
      auto at = [&](int i, int j) { return base + static_cast<std::uint32_t>(j * (cells + 1) + i); };
      for (int j = 0; j < cells; ++j) {
        for (int i = 0; i < cells; ++i) {
          if (side == 1) {
            mesh.faces.push_back({at(i, j), at(i + 1, j), at(i + 1, j + 1)});
            mesh.faces.push_back({at(i, j), at(i + 1, j + 1), at(i, j + 1)});
          } else {
            mesh.faces.push_back({at(i, j), at(i + 1, j + 1), at(i + 1, j)});
            mesh.faces.push_back({at(i, j), at(i, j + 1), at(i + 1, j + 1)});
          }
        }
      }
    }
  }
  return mesh;
}

ColoredMesh make_primitive(PrimitiveKind kind, int resolution, std::uint64_t color_seed) {
  if (resolution < 3) throw std::invalid_argument("make_primitive: resolution must be >= 3");
  const int n = resolution;
  ColoredMesh mesh;
  switch (kind) {
    case PrimitiveKind::kSphere:
    case PrimitiveKind::kBumpySphere: {
      const bool bumpy = kind == PrimitiveKind::kBumpySphere;
      mesh = grid_surface(2 * n, n, true, [&](double u, double v) {
        const double theta = 2.0 * kPi * u;
        const double phi = kPi * v;
        double r = 1.0;
        if (bumpy) r += 0.15 * std::sin(5.0 * theta) * std::sin(4.0 * phi);
        return Vec3{r * std::sin(phi) * std::cos(theta), r * std::sin(phi) * std::sin(theta), r * std::cos(phi)};
      });
      break;
    }
    case PrimitiveKind::kTorus:
      mesh = grid_surface(2 * n, n, true, [&](double u, double v) {
        const double a = 2.0 * kPi * u;
        const double b = 2.0 * kPi * v;
        const double ring = 1.0 + 0.35 * std::cos(b);
        return Vec3{ring * std::cos(a), ring * std::sin(a), 0.35 * std::sin(b)};
      });
      break;
    case PrimitiveKind::kBox:
      mesh = make_box({-0.8, -0.5, -0.3}, {0.8, 0.5, 0.3}, std::max(1, n / 2));
      break;
    case PrimitiveKind::kCylinder:
      // Side wall plus two capped ends via radius ramps in the parameterization.
      mesh = grid_surface(2 * n, n + 2, true, [&](double u, double v) {
        const double a = 2.0 * kPi * u;
        const double rows = n + 2;
        const double row = v * rows;
        double r = 0.6;
        double z = 0.0;
        if (row < 1.0) {
          r = 0.6 * row;
          z = -0.9;
        } else if (row > rows - 1.0) {
          r = 0.6 * (rows - row);
          z = 0.9;
        } else {
          z = -0.9 + 1.8 * (row - 1.0) / (rows - 2.0);
        }
        return Vec3{r * std::cos(a), r * std::sin(a), z};
      });
      break;
    case PrimitiveKind::kCone:
      mesh = grid_surface(2 * n, n + 1, true, [&](double u, double v) {
        const double a = 2.0 * kPi * u;
        const double rows = n + 1;
        const double row = v * rows;
        double r = 0.0;
        double z = 0.0;
        if (row < 1.0) {
          r = 0.7 * row;
          z = -0.6;
        } else {
          const double t = (row - 1.0) / (rows - 1.0);
          r = 0.7 * (1.0 - t);
          z = -0.6 + 1.4 * t;
        }
        return Vec3{r * std::cos(a), r * std::sin(a), z};
      });
      break;
  }
  drop_degenerate(mesh);
  mesh.name = primitive_name(kind);
  const ColorPattern pattern(color_seed);
  mesh.colors.resize(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) mesh.colors[i] = pattern(mesh.vertices[i]);
  return mesh;
}

}  // namespace tge
