#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <span>
#include <vector>

namespace metric_align {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Element of SE(3). Maps points from a source frame into a target frame:
/// x_target = R * x_source + t. Translation is in meters unless the source
/// frame is a normalized model frame.
class RigidTransform {
 public:
  RigidTransform();

  /// Re-orthonormalizes `rotation` by polar decomposition when it deviates
  /// from SO(3) by more than round-off. Throws kInvalidArgument for
  /// non-finite input, reflections or matrices far from a rotation.
  RigidTransform(const Mat3& rotation, const Vec3& translation);

  static RigidTransform identity() { return {}; }
  static RigidTransform from_axis_angle(const Vec3& rotation_vector,
                                        const Vec3& translation = Vec3::Zero());
  static RigidTransform from_matrix(const Mat4& m);

  const Mat3& rotation() const noexcept { return rotation_; }
  const Vec3& translation() const noexcept { return translation_; }

  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
  Vec3 operator*(const Vec3& p) const { return apply(p); }
  RigidTransform operator*(const RigidTransform& other) const;

  Mat4 matrix() const;
  Vec3 axis_angle() const;

  bool operator==(const RigidTransform& other) const {
    return rotation_ == other.rotation_ && translation_ == other.translation_;
  }

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

/// result(x) = a(b(x)).
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
/// (R^T, -R^T t).
RigidTransform invert(const RigidTransform& t);

/// Relative transform between two absolute object poses, (t_anchor)^-1 * t_query.
/// Bitwise-equal inputs yield the exact identity.
RigidTransform relative_pose(const RigidTransform& t_anchor, const RigidTransform& t_query);

/// Object pose in a camera frame from the camera's world pose (world_from_camera)
/// and the object's world pose (world_from_object).
RigidTransform chain_object_pose(const RigidTransform& t_cam_world,
                                 const RigidTransform& t_obj_world);

/// Geodesic angle between the rotations of `a` and `b`, in [0, pi].
double so3_geodesic_distance(const RigidTransform& a, const RigidTransform& b);
double rotation_angle(const Mat3& r);

Mat3 exp_so3(const Vec3& rotation_vector);

/// Camera-from-world pose for a camera at `eye` looking at `target`; camera
/// axes are x right, y down, z forward. `up` fixes the roll.
RigidTransform look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitZ());

/// A similarity: metric points are R * (scale * p) + t.
class ScaledModelPose {
 public:
  ScaledModelPose() = default;
  ScaledModelPose(double scale, const RigidTransform& pose);

  double scale() const noexcept { return scale_; }
  const RigidTransform& pose() const noexcept { return pose_; }

 private:
  double scale_ = 1.0;
  RigidTransform pose_;
};

Vec3 apply_similarity(const ScaledModelPose& sp, const Vec3& p);

/// Pinhole camera. Pixel (i, j) has its center at integer coordinates (i, j).
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  void validate() const;
  Mat3 matrix() const;
  bool contains(const Vec2& pixel) const;
  double diagonal() const;
};

Vec2 project(const CameraIntrinsics& k, const Vec3& p);
Vec3 backproject(const CameraIntrinsics& k, const Vec2& pixel, double depth);

enum class Frame { kObject, kCamera, kWorld };

struct PointCloud {
  std::vector<Vec3> points;
  Frame frame = Frame::kCamera;
};

struct Correspondence2D3D {
  Vec2 pixel;
  Vec3 point;
};

/// Closed-form minimizer of sum ||alpha * model_i - observed_i||^2 over alpha.
double estimate_scale(std::span<const Vec3> model_points_cam, std::span<const Vec3> observed_points_cam);
double estimate_scale(const PointCloud& model_points_cam, const PointCloud& observed_points_cam);

}  // namespace metric_align
