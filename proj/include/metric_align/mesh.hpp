#pragma once

#include "metric_align/geom.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace metric_align {

enum class MeshFrame { kNormalized, kMetric };

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  MeshFrame frame = MeshFrame::kMetric;

  bool empty() const { return vertices.empty() || faces.empty(); }
};

/// Validates indices and drops zero-area faces. Throws kFormatError on
/// out-of-range indices.
TriangleMesh clean_mesh(TriangleMesh mesh);

/// Re-centers on the bounding-box center (metric frame kept).
TriangleMesh center_mesh(TriangleMesh mesh);

/// Re-centers and scales to a unit bounding sphere about the box center.
TriangleMesh normalize_mesh(TriangleMesh mesh);

/// Uniformly scaled copy; the result is tagged metric.
TriangleMesh scale_mesh(const TriangleMesh& mesh, double scale);

/// Max vertex distance from the model origin.
double bounding_radius(const TriangleMesh& mesh);

std::pair<Vec3, Vec3> bounding_box(const TriangleMesh& mesh);

/// ASCII OBJ (v/f records, polygon faces fan-triangulated) or binary
/// little-endian PLY, chosen by extension. Cleans the mesh.
TriangleMesh load_mesh(const std::filesystem::path& path);
TriangleMesh load_obj(const std::filesystem::path& path);
TriangleMesh load_ply(const std::filesystem::path& path);
void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path);
void write_ply(const TriangleMesh& mesh, const std::filesystem::path& path);

// Primitives, centered at the origin.
TriangleMesh make_box(double size_x, double size_y, double size_z);
TriangleMesh make_uv_sphere(double radius, int slices = 32, int stacks = 16);
TriangleMesh make_icosphere(double radius, int subdivisions = 3);
TriangleMesh make_cylinder(double radius, double height, int segments = 32);
/// Closed quad in the z = 0 plane, facing +z and -z.
TriangleMesh make_plane(double size_x, double size_y);
/// Smooth star-shaped surface without symmetries: an icosphere whose radius
/// is modulated by a few seeded low-frequency bumps.
TriangleMesh make_blob(std::uint64_t seed, double radius = 1.0, int subdivisions = 4);

}  // namespace metric_align
