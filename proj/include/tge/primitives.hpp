#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tge/mesh.hpp"

namespace tge {

/// Procedural colored test shapes, used by the synthetic dataset generator
/// and the test suites.
enum class PrimitiveKind { kSphere, kTorus, kBox, kCylinder, kCone, kBumpySphere };

const std::vector<PrimitiveKind>& all_primitive_kinds();
std::string primitive_name(PrimitiveKind kind);
PrimitiveKind primitive_from_name(const std::string& name);

/// `resolution` controls tessellation density (>= 3). Vertex colors are a smooth
/// pattern whose phases are drawn from `color_seed`.
ColoredMesh make_primitive(PrimitiveKind kind, int resolution = 16, std::uint64_t color_seed = 0);

/// Axis-aligned box with corners `lo` and `hi`, each face split into a
/// `cells` x `cells` grid of quads (two triangles each).
ColoredMesh make_box(const Vec3& lo, const Vec3& hi, int cells = 1, const Vec3& color = {0.5, 0.5, 0.5});

}  // namespace tge
