#include "metric_align/geom.hpp"

#include "metric_align/error.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>

namespace metric_align {
namespace {

// Deviations below this are round-off and left untouched.
constexpr double kOrthoRoundOff = 1e-14;
// Deviations above this are not rotations at all.
constexpr double kOrthoReject = 1e-6;

Mat3 orthonormalize(const Mat3& r) {
  if (!r.allFinite()) {
    throw Error(ErrorCode::kInvalidArgument, "rotation has non-finite entries");
  }
  const double deviation = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (deviation > kOrthoReject) {
    throw Error(ErrorCode::kInvalidArgument, "matrix is not a rotation");
  }
  if (r.determinant() < 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "rotation is a reflection");
  }
  if (deviation <= kOrthoRoundOff) return r;
  Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

}  // namespace

RigidTransform::RigidTransform() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}

RigidTransform::RigidTransform(const Mat3& rotation, const Vec3& translation)
    : rotation_(orthonormalize(rotation)), translation_(translation) {
  if (!translation_.allFinite()) {
    throw Error(ErrorCode::kInvalidArgument, "translation has non-finite entries");
  }
}

RigidTransform RigidTransform::from_axis_angle(const Vec3& rotation_vector, const Vec3& translation) {
  return {exp_so3(rotation_vector), translation};
}

RigidTransform RigidTransform::from_matrix(const Mat4& m) {
  return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
}

RigidTransform RigidTransform::operator*(const RigidTransform& other) const {
  return compose(*this, other);
}

Mat4 RigidTransform::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation_;
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

Vec3 RigidTransform::axis_angle() const {
  const Eigen::AngleAxisd aa(rotation_);
  return aa.axis() * aa.angle();
}

Mat3 exp_so3(const Vec3& rotation_vector) {
  const double angle = rotation_vector.norm();
  if (angle < 1e-300) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, rotation_vector / angle).toRotationMatrix();
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  return {a.rotation() * b.rotation(), a.rotation() * b.translation() + a.translation()};
}

RigidTransform invert(const RigidTransform& t) {
  const Mat3 rt = t.rotation().transpose();
  return {rt, -(rt * t.translation())};
}

RigidTransform relative_pose(const RigidTransform& t_anchor, const RigidTransform& t_query) {
  if (t_anchor == t_query) return RigidTransform::identity();
  return compose(invert(t_anchor), t_query);
}

RigidTransform chain_object_pose(const RigidTransform& t_cam_world, const RigidTransform& t_obj_world) {
  return compose(invert(t_cam_world), t_obj_world);
}

double rotation_angle(const Mat3& r) {
  // atan2 form of arccos((tr - 1) / 2); stays accurate near 0 and pi.
  const Vec3 skew(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double s = 0.5 * skew.norm();
  const double c = 0.5 * (r.trace() - 1.0);
  return std::clamp(std::atan2(s, c), 0.0, M_PI);
}

double so3_geodesic_distance(const RigidTransform& a, const RigidTransform& b) {
  return rotation_angle(a.rotation() * b.rotation().transpose());
}

RigidTransform look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 forward = target - eye;
  if (forward.norm() <= 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "look_at: eye coincides with target");
  }
  const Vec3 z = forward.normalized();
  Vec3 x = z.cross(up);
  if (x.norm() < 1e-9) {
    // Looking along the up vector; fall back to a fixed secondary axis.
    const Vec3 alt = std::abs(z.y()) < 0.9 ? Vec3::UnitY() : Vec3::UnitX();
    x = z.cross(alt);
  }
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.row(0) = x.transpose();
  r.row(1) = y.transpose();
  r.row(2) = z.transpose();
  return {r, -(r * eye)};
}

ScaledModelPose::ScaledModelPose(double scale, const RigidTransform& pose) : scale_(scale), pose_(pose) {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw Error(ErrorCode::kNonPositiveScale, "scale must be positive and finite");
  }
}

Vec3 apply_similarity(const ScaledModelPose& sp, const Vec3& p) {
  return sp.pose().rotation() * (sp.scale() * p) + sp.pose().translation();
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "image size must be positive");
  }
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
    throw Error(ErrorCode::kInvalidArgument, "principal point outside the image");
  }
}

Mat3 CameraIntrinsics::matrix() const {
  Mat3 k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

bool CameraIntrinsics::contains(const Vec2& pixel) const {
  return pixel.x() >= -0.5 && pixel.x() < width - 0.5 && pixel.y() >= -0.5 && pixel.y() < height - 0.5;
}

double CameraIntrinsics::diagonal() const { return std::hypot(double(width), double(height)); }

Vec2 project(const CameraIntrinsics& k, const Vec3& p) {
  if (!(p.z() > 0.0)) {
    throw Error(ErrorCode::kNonPositiveDepth, "cannot project a point with z <= 0");
  }
  return {k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy};
}

Vec3 backproject(const CameraIntrinsics& k, const Vec2& pixel, double depth) {
  if (!(depth > 0.0)) {
    throw Error(ErrorCode::kNonPositiveDepth, "cannot lift a pixel with depth <= 0");
  }
  return {depth * (pixel.x() - k.cx) / k.fx, depth * (pixel.y() - k.cy) / k.fy, depth};
}

double estimate_scale(std::span<const Vec3> model_points_cam, std::span<const Vec3> observed_points_cam) {
  if (model_points_cam.empty() || model_points_cam.size() != observed_points_cam.size()) {
    throw Error(ErrorCode::kDegenerateInput, "scale estimation needs equally sized non-empty clouds");
  }
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < model_points_cam.size(); ++i) {
    num += model_points_cam[i].dot(observed_points_cam[i]);
    den += model_points_cam[i].squaredNorm();
  }
  if (!(den > 0.0)) {
    throw Error(ErrorCode::kDegenerateInput, "all model points at the camera origin");
  }
  const double alpha = num / den;
  if (!(alpha > 0.0)) {
    throw Error(ErrorCode::kNonPositiveScale, "least-squares scale is not positive");
  }
  return alpha;
}

double estimate_scale(const PointCloud& model_points_cam, const PointCloud& observed_points_cam) {
  return estimate_scale(std::span<const Vec3>(model_points_cam.points),
                        std::span<const Vec3>(observed_points_cam.points));
}

}  // namespace metric_align
