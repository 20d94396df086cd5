#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tge/vec3.hpp"

namespace tge {

using Face = std::array<std::uint32_t, 3>;

/// Triangle mesh with one RGB color per vertex (channels in [0,1]).
/// Textured-UV meshes must be baked to vertex colors before ingestion.
struct ColoredMesh {
  std::vector<Vec3> vertices;
  std::vector<Vec3> colors;
  std::vector<Face> faces;
  std::string name;

  /// Throws FormatError when the mesh breaks a structural invariant.
  void validate() const;

  double surface_area() const;
};

/// Points sampled from a mesh surface. Normals are optional.
struct ColoredPointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> colors;
  std::vector<Vec3> normals;  // empty, or same length as points
  std::string source;
  std::uint64_t seed = 0;

  std::size_t size() const { return points.size(); }
  bool has_normals() const { return !normals.empty(); }
  void validate() const;
};

/// Maps original coordinates p to normalized coordinates scale * (p + translation).
struct NormalizationTransform {
  Vec3 translation;
  double scale = 1.0;

  Vec3 apply(const Vec3& p) const { return (p + translation) * scale; }
};

enum class MeshFormat { kAuto, kObj, kPlyAscii, kPlyBinary };

/// Loads an OBJ (6-float `v` lines) or PLY (ascii / binary_little_endian with
/// red/green/blue vertex properties). uchar colors are rescaled to [0,1] and
/// polygons are fan-triangulated.
ColoredMesh load_mesh(const std::filesystem::path& path, MeshFormat hint = MeshFormat::kAuto);

/// Writes the mesh. kAuto picks from the extension (.ply → binary).
/// Binary PLY stores doubles and round-trips bit-exactly.
void save_mesh(const ColoredMesh& mesh, const std::filesystem::path& path,
               MeshFormat format = MeshFormat::kAuto);

/// Centroid to origin, maximum vertex distance to 1.
NormalizationTransform normalization_of(const ColoredMesh& mesh);
ColoredMesh apply_transform(const ColoredMesh& mesh, const NormalizationTransform& transform);
std::pair<ColoredMesh, NormalizationTransform> normalize(const ColoredMesh& mesh);

/// Area-weighted face choice, uniform barycentric placement, barycentric color
/// interpolation; normals are unit face normals. Pure function of its inputs.
ColoredPointCloud sample_points(const ColoredMesh& mesh, std::size_t n, std::uint64_t seed,
                                bool with_normals = false);

/// Area-weighted unit vertex normals.
std::vector<Vec3> vertex_normals(const ColoredMesh& mesh);

struct Aabb {
  Vec3 lo;
  Vec3 hi;
  double diagonal() const { return distance(lo, hi); }
};

Aabb bounding_box(const std::vector<Vec3>& points);

}  // namespace tge
