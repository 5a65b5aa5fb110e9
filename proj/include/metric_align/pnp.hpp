#pragma once

#include "metric_align/geom.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace metric_align {

struct RansacConfig {
  double threshold_px = 3.0;
  int max_iterations = 500;
  /// Adaptive stopping once a sample free of outliers is this likely.
  double confidence = 0.999;
  std::uint64_t seed = 0;
  /// Consensus needs at least max(min_inliers, ceil(min_inlier_ratio * n)) inliers.
  int min_inliers = 4;
  double min_inlier_ratio = 0.0;
  int refine_iterations = 30;
};

struct PnpResult {
  /// Camera-from-model pose.
  RigidTransform pose;
  std::vector<std::size_t> inliers;
  double rms_reprojection_px = 0.0;
};

/// Efficient PnP with four control points (three for planar point sets),
/// beta candidates refined by Gauss-Newton; the candidate with the smallest
/// reprojection error wins. Needs at least four correspondences.
RigidTransform solve_epnp(std::span<const Correspondence2D3D> corrs, const CameraIntrinsics& k);

/// Levenberg-Marquardt on the summed squared reprojection error.
RigidTransform refine_pose_lm(std::span<const Correspondence2D3D> corrs, const CameraIntrinsics& k,
                              const RigidTransform& initial, int max_iterations = 30);

double reprojection_error(const Correspondence2D3D& c, const CameraIntrinsics& k, const RigidTransform& pose);

/// Seeded RANSAC over minimal EPnP samples followed by refinement on all
/// inliers. Throws kTooFewCorrespondences (< 4 input pairs) or kNoConsensus.
PnpResult pnp_ransac(std::span<const Correspondence2D3D> corrs, const CameraIntrinsics& k,
                     const RansacConfig& cfg = {});

}  // namespace metric_align
