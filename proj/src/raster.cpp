#include "metric_align/raster.hpp"

#include "metric_align/error.hpp"
#include "metric_align/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace metric_align {
namespace {

constexpr double kNearPlane = 1e-4;
constexpr double kInf = std::numeric_limits<double>::infinity();

struct ScreenVertex {
  double u;
  double v;
  double inv_z;
};

double edge(const ScreenVertex& a, const ScreenVertex& b, double px, double py) {
  return (b.u - a.u) * (py - a.v) - (b.v - a.v) * (px - a.u);
}

// With y pointing down and positive area meaning clockwise on screen, an
// edge is top (horizontal, heading right) or left (heading up).
bool is_top_left(const ScreenVertex& a, const ScreenVertex& b) {
  const double dx = b.u - a.u;
  const double dy = b.v - a.v;
  return dy < 0.0 || (dy == 0.0 && dx > 0.0);
}

bool covers(double w, bool top_left) { return w > 0.0 || (w == 0.0 && top_left); }

class ZBuffer {
 public:
  ZBuffer(const CameraIntrinsics& k, bool with_labels)
      : k_(k), depth_(k.width, k.height, kInf), labels_(with_labels ? Image<int>(k.width, k.height, -1) : Image<int>()) {}

  void draw(const TriangleMesh& mesh, const RigidTransform& camera_from_object, double scale, int label) {
    cam_.resize(mesh.vertices.size());
    const Mat3 r = camera_from_object.rotation() * scale;
    const Vec3& t = camera_from_object.translation();
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) cam_[i] = r * mesh.vertices[i] + t;
    for (const auto& f : mesh.faces) draw_clipped({cam_[f[0]], cam_[f[1]], cam_[f[2]]}, label);
  }

  std::size_t covered() const { return covered_; }

  DepthMap take_depth() {
    for (double& d : depth_.data) {
      if (d == kInf) d = 0.0;
    }
    return std::move(depth_);
  }
  Image<int> take_labels() { return std::move(labels_); }

 private:
  void draw_clipped(const std::array<Vec3, 3>& tri, int label) {
    const bool in0 = tri[0].z() >= kNearPlane, in1 = tri[1].z() >= kNearPlane, in2 = tri[2].z() >= kNearPlane;
    if (in0 && in1 && in2) {
      draw_triangle(tri[0], tri[1], tri[2], label);
      return;
    }
    if (!in0 && !in1 && !in2) return;
    // Sutherland-Hodgman against z = near.
    std::array<Vec3, 4> poly;
    int n = 0;
    for (int i = 0; i < 3; ++i) {
      const Vec3& a = tri[i];
      const Vec3& b = tri[(i + 1) % 3];
      const bool a_in = a.z() >= kNearPlane;
      const bool b_in = b.z() >= kNearPlane;
      if (a_in) poly[n++] = a;
      if (a_in != b_in) {
        const double s = (kNearPlane - a.z()) / (b.z() - a.z());
        Vec3 p = a + s * (b - a);
        p.z() = kNearPlane;
        poly[n++] = p;
      }
    }
    for (int i = 1; i + 1 < n; ++i) draw_triangle(poly[0], poly[i], poly[i + 1], label);
  }

  ScreenVertex to_screen(const Vec3& p) const {
    const double iz = 1.0 / p.z();
    return {k_.fx * p.x() * iz + k_.cx, k_.fy * p.y() * iz + k_.cy, iz};
  }

  void draw_triangle(const Vec3& c0, const Vec3& c1, const Vec3& c2, int label) {
    ScreenVertex s0 = to_screen(c0);
    ScreenVertex s1 = to_screen(c1);
    ScreenVertex s2 = to_screen(c2);
    double area = edge(s0, s1, s2.u, s2.v);
    if (area < 0.0) {
      std::swap(s1, s2);
      area = -area;
    }
    if (!(area > 1e-12)) return;

    const double w_max = k_.width - 1;
    const double h_max = k_.height - 1;
    const double u_lo = std::clamp(std::ceil(std::min({s0.u, s1.u, s2.u})), 0.0, w_max + 1.0);
    const double u_hi = std::clamp(std::floor(std::max({s0.u, s1.u, s2.u})), -1.0, w_max);
    const double v_lo = std::clamp(std::ceil(std::min({s0.v, s1.v, s2.v})), 0.0, h_max + 1.0);
    const double v_hi = std::clamp(std::floor(std::max({s0.v, s1.v, s2.v})), -1.0, h_max);
    if (u_lo > u_hi || v_lo > v_hi) return;

    const bool tl0 = is_top_left(s1, s2);
    const bool tl1 = is_top_left(s2, s0);
    const bool tl2 = is_top_left(s0, s1);
    const double inv_area = 1.0 / area;
    const double d10 = s1.inv_z - s0.inv_z;
    const double d20 = s2.inv_z - s0.inv_z;

    for (int y = int(v_lo); y <= int(v_hi); ++y) {
      const double py = y;
      for (int x = int(u_lo); x <= int(u_hi); ++x) {
        const double px = x;
        const double w0 = edge(s1, s2, px, py);
        if (!covers(w0, tl0)) continue;
        const double w1 = edge(s2, s0, px, py);
        if (!covers(w1, tl1)) continue;
        const double w2 = edge(s0, s1, px, py);
        if (!covers(w2, tl2)) continue;
        // Offsets from vertex 0 keep constant-depth triangles exact.
        const double inv_z = s0.inv_z + (w1 * inv_area) * d10 + (w2 * inv_area) * d20;
        if (!(inv_z > 0.0)) continue;
        const double z = 1.0 / inv_z;
        double& cur = depth_.at(x, y);
        if (z < cur) {
          if (cur == kInf) ++covered_;
          cur = z;
          if (!labels_.empty()) labels_.at(x, y) = label;
        }
      }
    }
  }

  CameraIntrinsics k_;
  DepthMap depth_;
  Image<int> labels_;
  std::vector<Vec3> cam_;
  std::size_t covered_ = 0;
};

Mask mask_from_depth(const DepthMap& depth) {
  Mask mask(depth.width, depth.height, 0);
  for (std::size_t i = 0; i < depth.data.size(); ++i) mask.data[i] = depth.data[i] > 0.0 ? 1 : 0;
  return mask;
}

}  // namespace

RenderResult rasterize(const TriangleMesh& mesh, const CameraIntrinsics& k, const RigidTransform& camera_from_object,
                       double scale) {
  if (mesh.empty()) throw Error(ErrorCode::kEmptyRender, "mesh has no faces");
  ZBuffer zb(k, false);
  zb.draw(mesh, camera_from_object, scale, 0);
  if (zb.covered() == 0) throw Error(ErrorCode::kEmptyRender, "no triangle covers a pixel in front of the camera");
  RenderResult out;
  out.depth = zb.take_depth();
  out.mask = mask_from_depth(out.depth);
  return out;
}

RenderResult rasterize(const TriangleMesh& mesh, const CameraIntrinsics& k, const ScaledModelPose& pose) {
  return rasterize(mesh, k, pose.pose(), pose.scale());
}

SceneRender render_scene(std::span<const SceneItem> items, const CameraIntrinsics& k,
                         const RigidTransform& camera_from_world) {
  ZBuffer zb(k, true);
  for (std::size_t i = 0; i < items.size(); ++i) {
    zb.draw(*items[i].mesh, compose(camera_from_world, items[i].world_from_object), items[i].scale, int(i));
  }
  SceneRender out;
  out.depth = zb.take_depth();
  out.labels = zb.take_labels();
  return out;
}

std::vector<RigidTransform> sample_viewpoints(int n, double radius) {
  if (n < 4) throw Error(ErrorCode::kInvalidArgument, "need at least 4 viewpoints");
  if (!(radius > 0.0)) throw Error(ErrorCode::kInvalidArgument, "viewpoint radius must be positive");
  std::vector<RigidTransform> views;
  views.reserve(std::size_t(n));
  if (n == 6) {
    const Vec3 dirs[6] = {Vec3::UnitX(), -Vec3::UnitX(), Vec3::UnitY(), -Vec3::UnitY(), Vec3::UnitZ(), -Vec3::UnitZ()};
    for (const Vec3& d : dirs) {
      const Vec3 up = std::abs(d.z()) > 0.5 ? Vec3::UnitY() : Vec3::UnitZ();
      views.push_back(look_at(radius * d, Vec3::Zero(), up));
    }
    return views;
  }
  const double golden_angle = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden_angle * i;
    const Vec3 dir(r * std::cos(phi), r * std::sin(phi), z);
    views.push_back(look_at(radius * dir, Vec3::Zero(), Vec3::UnitZ()));
  }
  return views;
}

double template_radius(const TriangleMesh& mesh, const CameraIntrinsics& k, double fill) {
  const double r = bounding_radius(mesh);
  if (!(r > 0.0)) throw Error(ErrorCode::kDegenerateInput, "mesh has zero extent");
  const double target_px = 0.5 * fill * std::min(k.width, k.height);
  const double f = std::min(k.fx, k.fy);
  // Projected radius of a sphere at distance d is f * r / sqrt(d^2 - r^2).
  return r * std::sqrt(1.0 + (f / target_px) * (f / target_px));
}

std::vector<TemplateView> render_templates(const TriangleMesh& mesh, const CameraIntrinsics& k,
                                           std::span<const RigidTransform> views) {
  std::vector<TemplateView> out(views.size());
  parallel_for(views.size(), [&](std::size_t i) {
    RenderResult r = rasterize(mesh, k, views[i]);
    out[i] = TemplateView{views[i], std::move(r.depth), std::move(r.mask), k, 1.0};
  });
  return out;
}

std::vector<TemplateView> scale_templates(std::span<const TemplateView> templates, double scale) {
  if (!(scale > 0.0)) throw Error(ErrorCode::kNonPositiveScale, "template scale must be positive");
  std::vector<TemplateView> out(templates.begin(), templates.end());
  for (TemplateView& t : out) {
    for (double& d : t.depth.data) d *= scale;
    t.camera_from_object = RigidTransform(t.camera_from_object.rotation(), scale * t.camera_from_object.translation());
    t.model_scale *= scale;
  }
  return out;
}

bool mask_is_interior(const Mask& mask) {
  for (int x = 0; x < mask.width; ++x) {
    if (mask.at(x, 0) || mask.at(x, mask.height - 1)) return false;
  }
  for (int y = 0; y < mask.height; ++y) {
    if (mask.at(0, y) || mask.at(mask.width - 1, y)) return false;
  }
  return true;
}

double visibility_fraction(std::span<const SceneItem> items, std::size_t target_index, const CameraIntrinsics& k,
                           const RigidTransform& camera_from_world) {
  if (target_index >= items.size()) throw Error(ErrorCode::kInvalidArgument, "target index out of range");
  const SceneItem& target = items[target_index];
  const MaskRender alone =
      render_mask(*target.mesh, k, compose(camera_from_world, target.world_from_object), target.scale);
  const std::size_t full = count_nonzero(alone.mask);
  if (full == 0) return 0.0;
  const SceneRender scene = render_scene(items, k, camera_from_world);
  const auto visible = std::size_t(std::count(scene.labels.data.begin(), scene.labels.data.end(), int(target_index)));
  return std::clamp(double(visible) / double(full), 0.0, 1.0);
}

MaskRender render_mask(const TriangleMesh& mesh, const CameraIntrinsics& k, const RigidTransform& camera_from_object,
                       double scale) {
  try {
    return {rasterize(mesh, k, camera_from_object, scale).mask, false};
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kEmptyRender) throw;
    return {Mask(k.width, k.height, 0), true};
  }
}

void Observation::validate() const {
  intrinsics.validate();
  if (depth.width != intrinsics.width || depth.height != intrinsics.height) {
    throw Error(ErrorCode::kFormatError, "depth size does not match intrinsics");
  }
  if (mask.width != depth.width || mask.height != depth.height) {
    throw Error(ErrorCode::kFormatError, "mask size does not match depth");
  }
  for (std::size_t i = 0; i < depth.data.size(); ++i) {
    const double d = depth.data[i];
    if (!std::isfinite(d) || d < 0.0) throw Error(ErrorCode::kFormatError, "depth must be finite and >= 0");
    if (mask.data[i] && d <= 0.0) throw Error(ErrorCode::kFormatError, "masked pixel without depth");
  }
}

void fill_depth_holes(Observation& obs, int max_passes) {
  DepthMap& depth = obs.depth;
  for (int pass = 0; pass < max_passes; ++pass) {
    DepthMap next = depth;
    bool changed = false;
    bool remaining = false;
    for (int y = 0; y < depth.height; ++y) {
      for (int x = 0; x < depth.width; ++x) {
        if (!obs.mask.at(x, y) || depth.at(x, y) > 0.0) continue;
        std::array<double, 8> vals;
        int n = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = x + dx, ny = y + dy;
            if ((dx || dy) && depth.in_bounds(nx, ny) && obs.mask.at(nx, ny) && depth.at(nx, ny) > 0.0) {
              vals[std::size_t(n++)] = depth.at(nx, ny);
            }
          }
        }
        if (n == 0) {
          remaining = true;
          continue;
        }
        std::nth_element(vals.begin(), vals.begin() + n / 2, vals.begin() + n);
        next.at(x, y) = vals[std::size_t(n / 2)];
        changed = true;
      }
    }
    depth = std::move(next);
    if (!changed || !remaining) break;
  }
  for (std::size_t i = 0; i < depth.data.size(); ++i) {
    if (obs.mask.data[i] && !(depth.data[i] > 0.0)) obs.mask.data[i] = 0;
  }
}

Observation render_observation(const TriangleMesh& mesh, const CameraIntrinsics& k, const ScaledModelPose& pose) {
  RenderResult r = rasterize(mesh, k, pose);
  Observation obs;
  obs.depth = std::move(r.depth);
  obs.mask = std::move(r.mask);
  obs.intrinsics = k;
  return obs;
}

}  // namespace metric_align
