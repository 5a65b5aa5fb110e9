#include "metric_align/mesh.hpp"

#include "metric_align/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>

namespace metric_align {
namespace fs = std::filesystem;

TriangleMesh clean_mesh(TriangleMesh mesh) {
  const int n = int(mesh.vertices.size());
  for (const Vec3& v : mesh.vertices) {
    if (!v.allFinite()) throw Error(ErrorCode::kFormatError, "mesh vertex is not finite");
  }
  double extent = 0.0;
  if (n > 0) {
    const auto [lo, hi] = bounding_box(mesh);
    extent = (hi - lo).norm();
  }
  const double min_area2 = 1e-24 * extent * extent * extent * extent;
  std::vector<std::array<int, 3>> kept;
  kept.reserve(mesh.faces.size());
  for (const auto& f : mesh.faces) {
    for (int idx : f) {
      if (idx < 0 || idx >= n) throw Error(ErrorCode::kFormatError, "face index out of range");
    }
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) continue;
    const Vec3 c = (mesh.vertices[f[1]] - mesh.vertices[f[0]]).cross(mesh.vertices[f[2]] - mesh.vertices[f[0]]);
    if (c.squaredNorm() <= min_area2) continue;
    kept.push_back(f);
  }
  mesh.faces = std::move(kept);
  return mesh;
}

std::pair<Vec3, Vec3> bounding_box(const TriangleMesh& mesh) {
  if (mesh.vertices.empty()) throw Error(ErrorCode::kEmptyModel, "mesh has no vertices");
  Vec3 lo = mesh.vertices.front();
  Vec3 hi = lo;
  for (const Vec3& v : mesh.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  return {lo, hi};
}

TriangleMesh center_mesh(TriangleMesh mesh) {
  const auto [lo, hi] = bounding_box(mesh);
  const Vec3 center = 0.5 * (lo + hi);
  for (Vec3& v : mesh.vertices) v -= center;
  return mesh;
}

TriangleMesh normalize_mesh(TriangleMesh mesh) {
  mesh = center_mesh(std::move(mesh));
  const double r = bounding_radius(mesh);
  if (!(r > 0.0)) throw Error(ErrorCode::kDegenerateInput, "mesh collapses to a point");
  for (Vec3& v : mesh.vertices) v /= r;
  mesh.frame = MeshFrame::kNormalized;
  return mesh;
}

TriangleMesh scale_mesh(const TriangleMesh& mesh, double scale) {
  if (!(scale > 0.0)) throw Error(ErrorCode::kNonPositiveScale, "mesh scale must be positive");
  TriangleMesh out = mesh;
  for (Vec3& v : out.vertices) v *= scale;
  out.frame = MeshFrame::kMetric;
  return out;
}

double bounding_radius(const TriangleMesh& mesh) {
  double r2 = 0.0;
  for (const Vec3& v : mesh.vertices) r2 = std::max(r2, v.squaredNorm());
  return std::sqrt(r2);
}

// ---------------------------------------------------------------------------
// File formats

TriangleMesh load_mesh(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return char(std::tolower(c)); });
  if (ext == ".obj") return load_obj(path);
  if (ext == ".ply") return load_ply(path);
  throw Error(ErrorCode::kFormatError, "unsupported mesh extension: " + path.string());
}

TriangleMesh load_obj(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  TriangleMesh mesh;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v.x() >> v.y() >> v.z())) {
        throw Error(ErrorCode::kFormatError, path.string() + ":" + std::to_string(line_no) + ": bad vertex");
      }
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<int> poly;
      std::string tok;
      while (ls >> tok) {
        const int idx = std::stoi(tok.substr(0, tok.find('/')));
        poly.push_back(idx > 0 ? idx - 1 : int(mesh.vertices.size()) + idx);
      }
      if (poly.size() < 3) {
        throw Error(ErrorCode::kFormatError, path.string() + ":" + std::to_string(line_no) + ": bad face");
      }
      for (std::size_t i = 1; i + 1 < poly.size(); ++i) mesh.faces.push_back({poly[0], poly[i], poly[i + 1]});
    }
  }
  return clean_mesh(std::move(mesh));
}

namespace {

enum class PlyType { kI8, kU8, kI16, kU16, kI32, kU32, kF32, kF64 };

PlyType parse_ply_type(const std::string& s) {
  static const std::map<std::string, PlyType> kTypes = {
      {"char", PlyType::kI8},    {"int8", PlyType::kI8},     {"uchar", PlyType::kU8},
      {"uint8", PlyType::kU8},   {"short", PlyType::kI16},   {"int16", PlyType::kI16},
      {"ushort", PlyType::kU16}, {"uint16", PlyType::kU16},  {"int", PlyType::kI32},
      {"int32", PlyType::kI32},  {"uint", PlyType::kU32},    {"uint32", PlyType::kU32},
      {"float", PlyType::kF32},  {"float32", PlyType::kF32}, {"double", PlyType::kF64},
      {"float64", PlyType::kF64}};
  const auto it = kTypes.find(s);
  if (it == kTypes.end()) throw Error(ErrorCode::kFormatError, "unknown PLY type " + s);
  return it->second;
}

std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::kI8:
    case PlyType::kU8: return 1;
    case PlyType::kI16:
    case PlyType::kU16: return 2;
    case PlyType::kI32:
    case PlyType::kU32:
    case PlyType::kF32: return 4;
    case PlyType::kF64: return 8;
  }
  return 0;
}

double read_ply_value(std::istream& in, PlyType t) {
  static_assert(std::endian::native == std::endian::little, "PLY reader assumes a little-endian host");
  unsigned char buf[8];
  if (!in.read(reinterpret_cast<char*>(buf), std::streamsize(ply_size(t)))) {
    throw Error(ErrorCode::kFormatError, "truncated PLY body");
  }
  switch (t) {
    case PlyType::kI8: return double(std::int8_t(buf[0]));
    case PlyType::kU8: return double(buf[0]);
    case PlyType::kI16: { std::int16_t v; std::memcpy(&v, buf, 2); return v; }
    case PlyType::kU16: { std::uint16_t v; std::memcpy(&v, buf, 2); return v; }
    case PlyType::kI32: { std::int32_t v; std::memcpy(&v, buf, 4); return v; }
    case PlyType::kU32: { std::uint32_t v; std::memcpy(&v, buf, 4); return v; }
    case PlyType::kF32: { float v; std::memcpy(&v, buf, 4); return v; }
    case PlyType::kF64: { double v; std::memcpy(&v, buf, 8); return v; }
  }
  return 0.0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::kF32;
  bool is_list = false;
  PlyType count_type = PlyType::kU8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

}  // namespace

TriangleMesh load_ply(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) {
    throw Error(ErrorCode::kFormatError, path.string() + ": missing PLY magic");
  }
  std::vector<PlyElement> elements;
  bool binary_le = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "format") {
      std::string fmt;
      ls >> fmt;
      binary_le = fmt == "binary_little_endian";
    } else if (tag == "element") {
      PlyElement e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (tag == "property") {
      if (elements.empty()) throw Error(ErrorCode::kFormatError, "PLY property before element");
      PlyProperty p;
      std::string type;
      ls >> type;
      if (type == "list") {
        std::string count_type, item_type;
        ls >> count_type >> item_type >> p.name;
        p.is_list = true;
        p.count_type = parse_ply_type(count_type);
        p.type = parse_ply_type(item_type);
      } else {
        p.type = parse_ply_type(type);
        ls >> p.name;
      }
      elements.back().properties.push_back(p);
    } else if (tag == "end_header") {
      break;
    }
  }
  if (!binary_le) throw Error(ErrorCode::kFormatError, path.string() + ": only binary_little_endian PLY is supported");

  TriangleMesh mesh;
  for (const PlyElement& e : elements) {
    for (std::size_t i = 0; i < e.count; ++i) {
      Vec3 v = Vec3::Zero();
      for (const PlyProperty& p : e.properties) {
        if (p.is_list) {
          const auto count = std::size_t(read_ply_value(in, p.count_type));
          std::vector<int> poly(count);
          for (auto& idx : poly) idx = int(read_ply_value(in, p.type));
          if (e.name == "face" && (p.name == "vertex_indices" || p.name == "vertex_index")) {
            if (count < 3) throw Error(ErrorCode::kFormatError, "PLY face with fewer than 3 vertices");
            for (std::size_t k = 1; k + 1 < count; ++k) mesh.faces.push_back({poly[0], poly[k], poly[k + 1]});
          }
        } else {
          const double value = read_ply_value(in, p.type);
          if (e.name == "vertex") {
            if (p.name == "x") v.x() = value;
            if (p.name == "y") v.y() = value;
            if (p.name == "z") v.z() = value;
          }
        }
      }
      if (e.name == "vertex") mesh.vertices.push_back(v);
    }
  }
  return clean_mesh(std::move(mesh));
}

void write_obj(const TriangleMesh& mesh, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot write " + path.string());
  out.precision(17);
  for (const Vec3& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  if (!out) throw Error(ErrorCode::kIoFailure, "write failed for " + path.string());
}

void write_ply(const TriangleMesh& mesh, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot write " + path.string());
  out << "ply\nformat binary_little_endian 1.0\n"
      << "element vertex " << mesh.vertices.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "element face " << mesh.faces.size() << "\n"
      << "property list uchar int vertex_indices\nend_header\n";
  for (const Vec3& v : mesh.vertices) {
    const float xyz[3] = {float(v.x()), float(v.y()), float(v.z())};
    out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
  }
  for (const auto& f : mesh.faces) {
    const std::uint8_t n = 3;
    const std::int32_t idx[3] = {f[0], f[1], f[2]};
    out.write(reinterpret_cast<const char*>(&n), 1);
    out.write(reinterpret_cast<const char*>(idx), sizeof(idx));
  }
  if (!out) throw Error(ErrorCode::kIoFailure, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Primitives

TriangleMesh make_box(double size_x, double size_y, double size_z) {
  const double hx = 0.5 * size_x, hy = 0.5 * size_y, hz = 0.5 * size_z;
  TriangleMesh m;
  for (int i = 0; i < 8; ++i) {
    m.vertices.emplace_back((i & 1) ? hx : -hx, (i & 2) ? hy : -hy, (i & 4) ? hz : -hz);
  }
  // Outward-facing, counter-clockwise seen from outside.
  m.faces = {{0, 2, 3}, {0, 3, 1}, {4, 5, 7}, {4, 7, 6}, {0, 1, 5}, {0, 5, 4},
             {2, 6, 7}, {2, 7, 3}, {0, 4, 6}, {0, 6, 2}, {1, 3, 7}, {1, 7, 5}};
  return m;
}

TriangleMesh make_uv_sphere(double radius, int slices, int stacks) {
  TriangleMesh m;
  m.vertices.emplace_back(0.0, 0.0, radius);
  for (int i = 1; i < stacks; ++i) {
    const double theta = M_PI * i / stacks;
    for (int j = 0; j < slices; ++j) {
      const double phi = 2.0 * M_PI * j / slices;
      m.vertices.emplace_back(radius * std::sin(theta) * std::cos(phi), radius * std::sin(theta) * std::sin(phi),
                              radius * std::cos(theta));
    }
  }
  m.vertices.emplace_back(0.0, 0.0, -radius);
  const int south = int(m.vertices.size()) - 1;
  auto ring = [&](int i, int j) { return 1 + (i - 1) * slices + (j % slices); };
  for (int j = 0; j < slices; ++j) m.faces.push_back({0, ring(1, j), ring(1, j + 1)});
  for (int i = 1; i + 1 < stacks; ++i) {
    for (int j = 0; j < slices; ++j) {
      m.faces.push_back({ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)});
      m.faces.push_back({ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)});
    }
  }
  for (int j = 0; j < slices; ++j) m.faces.push_back({south, ring(stacks - 1, j + 1), ring(stacks - 1, j)});
  return m;
}

TriangleMesh make_icosphere(double radius, int subdivisions) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                         {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (Vec3& p : v) p.normalize();
  std::vector<std::array<int, 3>> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                       {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                       {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                       {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoints;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      const auto it = midpoints.find(key);
      if (it != midpoints.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      const int idx = int(v.size()) - 1;
      midpoints.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(f.size() * 4);
    for (const auto& tri : f) {
      const int a = midpoint(tri[0], tri[1]);
      const int b = midpoint(tri[1], tri[2]);
      const int c = midpoint(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  TriangleMesh m;
  m.vertices.reserve(v.size());
  for (const Vec3& p : v) m.vertices.push_back(radius * p);
  m.faces = std::move(f);
  return m;
}

TriangleMesh make_cylinder(double radius, double height, int segments) {
  TriangleMesh m;
  const double h = 0.5 * height;
  for (int j = 0; j < segments; ++j) {
    const double phi = 2.0 * M_PI * j / segments;
    m.vertices.emplace_back(radius * std::cos(phi), radius * std::sin(phi), -h);
    m.vertices.emplace_back(radius * std::cos(phi), radius * std::sin(phi), h);
  }
  const int bottom = int(m.vertices.size());
  m.vertices.emplace_back(0.0, 0.0, -h);
  const int top = bottom + 1;
  m.vertices.emplace_back(0.0, 0.0, h);
  for (int j = 0; j < segments; ++j) {
    const int k = (j + 1) % segments;
    const int b0 = 2 * j, t0 = 2 * j + 1, b1 = 2 * k, t1 = 2 * k + 1;
    m.faces.push_back({b0, b1, t1});
    m.faces.push_back({b0, t1, t0});
    m.faces.push_back({bottom, b1, b0});
    m.faces.push_back({top, t0, t1});
  }
  return m;
}

TriangleMesh make_plane(double size_x, double size_y) {
  const double hx = 0.5 * size_x, hy = 0.5 * size_y;
  TriangleMesh m;
  m.vertices = {{-hx, -hy, 0.0}, {hx, -hy, 0.0}, {hx, hy, 0.0}, {-hx, hy, 0.0}};
  m.faces = {{0, 1, 2}, {0, 2, 3}};
  return m;
}

TriangleMesh make_blob(std::uint64_t seed, double radius, int subdivisions) {
  TriangleMesh m = make_icosphere(1.0, subdivisions);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> amp(0.15, 0.4);
  std::uniform_real_distribution<double> sharp(2.0, 5.0);
  struct Bump {
    Vec3 dir;
    double amplitude;
    double sharpness;
  };
  std::vector<Bump> bumps(5);
  for (Bump& b : bumps) {
    b.dir = Vec3(gauss(rng), gauss(rng), gauss(rng)).normalized();
    b.amplitude = amp(rng);
    b.sharpness = sharp(rng);
  }
  for (Vec3& v : m.vertices) {
    double r = 1.0;
    for (const Bump& b : bumps) r += b.amplitude * std::exp(b.sharpness * (v.dot(b.dir) - 1.0));
    v *= r;
  }
  const double scale = radius / bounding_radius(m);
  for (Vec3& v : m.vertices) v *= scale;
  return m;
}

}  // namespace metric_align
