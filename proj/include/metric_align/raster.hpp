#pragma once

#include "metric_align/geom.hpp"
#include "metric_align/image.hpp"
#include "metric_align/mesh.hpp"

#include <optional>
#include <span>
#include <vector>

namespace metric_align {

struct RenderResult {
  DepthMap depth;
  Mask mask;
};

/// Z-buffered perspective rasterization with pixel-center sampling and a
/// top-left fill rule. Depth is camera z of the nearest triangle. Triangles
/// are clipped at a near plane; no backface culling. Throws kEmptyRender if
/// no pixel is covered.
RenderResult rasterize(const TriangleMesh& mesh, const CameraIntrinsics& k,
                       const RigidTransform& camera_from_object, double scale = 1.0);
RenderResult rasterize(const TriangleMesh& mesh, const CameraIntrinsics& k, const ScaledModelPose& pose);

/// One object placed in a scene.
struct SceneItem {
  const TriangleMesh* mesh = nullptr;
  RigidTransform world_from_object;
  double scale = 1.0;
};

struct SceneRender {
  DepthMap depth;
  /// Index into the item list of the nearest surface, -1 for background.
  Image<int> labels;
};

/// Joint render of several meshes; never throws for empty coverage.
SceneRender render_scene(std::span<const SceneItem> items, const CameraIntrinsics& k,
                         const RigidTransform& camera_from_world);

/// Fibonacci-lattice look-at cameras at `radius` around the origin (camera-
/// from-object). n == 6 yields the six axis-aligned views instead.
std::vector<RigidTransform> sample_viewpoints(int n, double radius);

/// Camera distance at which the model's bounding sphere spans `fill` of the
/// smaller image dimension.
double template_radius(const TriangleMesh& mesh, const CameraIntrinsics& k, double fill = 0.6);

struct TemplateView {
  RigidTransform camera_from_object;
  DepthMap depth;
  Mask mask;
  CameraIntrinsics intrinsics;
  /// Scale of the rendered mesh relative to the reference (normalized) model.
  double model_scale = 1.0;
};

std::vector<TemplateView> render_templates(const TriangleMesh& mesh, const CameraIntrinsics& k,
                                           std::span<const RigidTransform> views);

/// Template renders of `mesh` scaled by `scale` about the camera center:
/// depth and translation multiply, masks are unchanged.
std::vector<TemplateView> scale_templates(std::span<const TemplateView> templates, double scale);

/// True when the mask does not touch the image border.
bool mask_is_interior(const Mask& mask);

/// Visible pixels of the target over its unoccluded footprint at the same pose.
double visibility_fraction(std::span<const SceneItem> items, std::size_t target_index,
                           const CameraIntrinsics& k, const RigidTransform& camera_from_world);

struct MaskRender {
  Mask mask;
  bool empty = false;
};

/// Coverage of `mesh` at `camera_from_object`; an empty render is reported
/// through `empty` rather than thrown.
MaskRender render_mask(const TriangleMesh& mesh, const CameraIntrinsics& k,
                       const RigidTransform& camera_from_object, double scale = 1.0);

/// Registered depth frame with a target segmentation.
struct Observation {
  DepthMap depth;
  Mask mask;
  CameraIntrinsics intrinsics;
  std::optional<ColorImage> color;

  void validate() const;
};

/// Fills zero-depth pixels inside the mask from valid masked neighbours and
/// drops the ones that cannot be filled from the mask.
void fill_depth_holes(Observation& obs, int max_passes = 4);

/// Noise-free observation of `mesh` under a similarity pose.
Observation render_observation(const TriangleMesh& mesh, const CameraIntrinsics& k,
                               const ScaledModelPose& pose);

}  // namespace metric_align
