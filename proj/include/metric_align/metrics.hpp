#pragma once

#include "metric_align/geom.hpp"
#include "metric_align/image.hpp"
#include "metric_align/mesh.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace metric_align {

using PosePair = std::pair<RigidTransform, RigidTransform>;  // (gt, est)

/// Mean distance between corresponding model points under the two poses.
double add(const PointCloud& model_points, const RigidTransform& t_gt, const RigidTransform& t_est);
/// Mean distance from each gt-posed point to the nearest est-posed point.
double adds(const PointCloud& model_points, const RigidTransform& t_gt, const RigidTransform& t_est);

/// Fraction of pairs with ADD below threshold_factor * diameter.
double add_recall(const PointCloud& model_points, double diameter, std::span<const PosePair> pairs,
                  double threshold_factor = 0.1);
/// Area under the recall-vs-threshold curve on [0, max_threshold], normalized to [0, 1].
double auc(std::span<const double> errors, double max_threshold);
double add_auc(const PointCloud& model_points, std::span<const PosePair> pairs, double max_threshold = 0.1);

/// Object symmetries; transforms act in the model frame. Always holds identity.
struct SymmetrySet {
  std::vector<RigidTransform> transforms{RigidTransform()};

  static SymmetrySet identity_only() { return {}; }
  /// Identity is added when missing.
  static SymmetrySet discrete(std::span<const RigidTransform> transforms);
  /// Rotations about the line through `point` along `axis`, discretized.
  static SymmetrySet continuous(const Vec3& axis, const Vec3& point = Vec3::Zero(), int steps = 64);
};

/// Maximum symmetry-aware surface distance over mesh vertices.
double mssd(const TriangleMesh& mesh, const SymmetrySet& symmetries, const RigidTransform& t_gt,
            const RigidTransform& t_est);
/// Maximum symmetry-aware projection distance in pixels. Throws kBehindCamera.
double mspd(const TriangleMesh& mesh, const SymmetrySet& symmetries, const CameraIntrinsics& k,
            const RigidTransform& t_gt, const RigidTransform& t_est);

/// Visible surface discrepancy with the step cost, one value per tau.
/// Visibility uses the occlusion tolerance delta against `obs_depth`.
std::vector<double> vsd(const TriangleMesh& mesh, const CameraIntrinsics& k, const RigidTransform& t_gt,
                        const RigidTransform& t_est, const DepthMap& obs_depth, std::span<const double> taus,
                        double delta = 0.015);
double vsd(const TriangleMesh& mesh, const CameraIntrinsics& k, const RigidTransform& t_gt,
           const RigidTransform& t_est, const DepthMap& obs_depth, double tau, double delta = 0.015);

/// 0.05, 0.10, ..., 0.50
std::vector<double> bop_fractions();

/// Per-annotation pose errors; vsd holds one value per bop_fractions() tau.
struct AnnotationErrors {
  std::vector<double> vsd;
  double mssd = 0.0;
  double mspd = 0.0;
  double diameter = 1.0;
};

struct RecallSummary {
  double vsd_recall = 0.0;
  double mssd_recall = 0.0;
  double mspd_recall = 0.0;
  double ar = 0.0;
};

/// VSD recall over the tau x theta grid, MSSD over {0.05..0.5} x diameter,
/// MSPD over {5..50} x (image_width / 640); AR is their mean.
RecallSummary bop_average_recall(std::span<const AnnotationErrors> errors, int image_width);

struct MetricReport {
  double add = 0.0;
  double adds = 0.0;
  double vsd_recall = 0.0;
  double mssd_recall = 0.0;
  double mspd_recall = 0.0;
  double ar = 0.0;
  double chamfer = 0.0;
};

struct ReportRow {
  std::string scene;
  std::string image;
  std::string obj;
  MetricReport metrics;
};

/// Symmetric mean nearest-neighbour distance.
double chamfer(const PointCloud& a, const PointCloud& b);

/// Maximum pairwise vertex distance (exact).
double diameter(const TriangleMesh& mesh);
double diameter(std::span<const Vec3> points);

/// Mesh vertices, or `samples` area-weighted surface points when the mesh
/// has more than `max_vertices` vertices.
PointCloud model_points(const TriangleMesh& mesh, std::size_t max_vertices = 10000, std::size_t samples = 2048,
                        std::uint64_t seed = 0);

/// Columns: scene, image, obj, add, adds, vsd_recall, mssd_recall, mspd_recall, ar, chamfer.
/// A final "mean" row averages every numeric column.
void write_report_csv(const std::filesystem::path& path, std::span<const ReportRow> rows);
void write_report_json(const std::filesystem::path& path, std::span<const ReportRow> rows);
MetricReport mean_report(std::span<const ReportRow> rows);

}  // namespace metric_align
