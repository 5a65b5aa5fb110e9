#pragma once

#include "metric_align/geom.hpp"
#include "metric_align/match.hpp"
#include "metric_align/mesh.hpp"
#include "metric_align/pnp.hpp"
#include "metric_align/raster.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <span>
#include <vector>

namespace metric_align {

struct CoarseConfig {
  /// Views with fewer usable pairs are rejected.
  int min_matches = 6;
  /// Fix alpha = 1, for templates that already carry metric scale.
  bool lock_scale = false;
  RansacConfig ransac{.threshold_px = 3.0, .max_iterations = 500, .confidence = 0.999, .seed = 0,
                      .min_inliers = 4, .min_inlier_ratio = 0.25, .refine_iterations = 30};
};

struct CoarseResult {
  /// Similarity of the reference model into the observation camera.
  ScaledModelPose pose;
  /// Scale recovered relative to the template's own mesh (1 when locked).
  double alpha = 1.0;
  std::size_t selected_view = 0;
  std::size_t match_count = 0;
  /// Observation pixel and template-mesh point of each PnP inlier.
  std::vector<Correspondence2D3D> inlier_pairs;
};

/// Lift, PnP and closed-form scale for one template's matches.
CoarseResult align_to_view(const Observation& obs, const TemplateView& tmpl, const MatchSet& matches,
                           const CoarseConfig& cfg = {});

/// Matches every template, keeps the best view and aligns to it.
CoarseResult coarse_align(const Observation& obs, std::span<const TemplateView> templates, const Matcher& matcher,
                          const CoarseConfig& cfg = {});

struct RefineStep {
  Vec3 delta_rotation = Vec3::Zero();
  Vec3 delta_translation = Vec3::Zero();
  double delta_scale = 1.0;
};

/// Incremental pose update from a render at the current pose. The rotation
/// acts about the current model center: R+ = dR * R, t+ = t + dt.
class Refiner {
 public:
  virtual ~Refiner() = default;
  virtual RefineStep step(const TriangleMesh& mesh, const Observation& obs, const ScaledModelPose& current) const = 0;
};

struct IcpConfig {
  int stride = 2;
  /// Associations farther than this fraction of the model radius are dropped.
  double max_distance_factor = 0.5;
  /// ... and farther than this multiple of the median distance.
  double median_factor = 3.0;
  int min_pairs = 100;
  /// Re-associations against the same render.
  int inner_iterations = 3;
};

/// Point-to-plane ICP between the rendered and observed depth (normals from
/// the observation). delta_scale is always 1.
RefineStep refine_step_icp(const TriangleMesh& mesh, const Observation& obs, const ScaledModelPose& current,
                           const IcpConfig& cfg = {});

class IcpRefiner final : public Refiner {
 public:
  explicit IcpRefiner(const IcpConfig& cfg = {}) : cfg_(cfg) {}
  RefineStep step(const TriangleMesh& mesh, const Observation& obs, const ScaledModelPose& current) const override {
    return refine_step_icp(mesh, obs, current, cfg_);
  }

 private:
  IcpConfig cfg_;
};

ScaledModelPose apply_step(const ScaledModelPose& pose, const RefineStep& step);

enum class RematchSource {
  /// Render the mesh at the current pose and match that render.
  kCurrentRender,
  /// Re-use the coarse stage's best template, re-selected periodically.
  kCoarseTemplate,
};

struct FineConfig {
  int max_iterations = 10;
  double rotation_tol_deg = 0.05;
  double translation_tol_m = 5e-4;
  double scale_tol = 1e-3;
  /// Step (b) of each iteration; off for the "no scale re-optimization" ablation.
  bool scale_reoptimization = true;
  RematchSource rematch_source = RematchSource::kCurrentRender;
  /// With kCoarseTemplate: re-select among all templates every k iterations.
  int reselect_every = 3;
  CoarseConfig rematch;
  /// Depth tolerance of the per-iteration trace score.
  double score_tau = 0.02;
};

struct IterationTrace {
  RefineStep step;
  double score = 0.0;
};

struct AlignmentResult {
  ScaledModelPose pose;
  double coarse_scale = 1.0;
  /// coarse scale times the product of every iteration's delta_scale.
  double cumulative_scale = 1.0;
  int iterations = 0;
  bool converged = false;
  std::vector<IterationTrace> trace;
};

AlignmentResult fine_align(const TriangleMesh& mesh_normalized, const Observation& obs, const CoarseResult& coarse,
                           const Refiner& refiner, const Matcher& matcher, std::span<const TemplateView> templates,
                           const FineConfig& cfg = {});

/// Per-iteration {delta_rot_deg, delta_t_m, delta_s, score}.
nlohmann::json trace_to_json(const AlignmentResult& result);

struct HypothesisScore {
  RigidTransform hypothesis;
  double score = 0.0;
};

/// Pixels of (rendered mask & observed mask) whose depths agree within tau,
/// over the union of both masks.
HypothesisScore score_hypothesis(const TriangleMesh& mesh_metric, const Observation& obs,
                                 const RigidTransform& hypothesis, double tau = 0.02);

struct QueryConfig {
  /// Template-pose hypotheses besides the coarse one.
  int top_m = 5;
  int refine_steps = 6;
  double tau = 0.02;
  CoarseConfig coarse{.lock_scale = true};
};

struct QueryResult {
  RigidTransform pose;
  std::size_t best_index = 0;
  /// One entry per generated hypothesis, after refinement; failed ones score -1.
  std::vector<HypothesisScore> hypotheses;
};

/// Render-compare-select over a coarse hypothesis and the top-m template
/// poses re-centered on the observed points. Throws kNoHypothesis when every
/// path fails.
QueryResult estimate_query_pose(const TriangleMesh& mesh_metric, const Observation& query,
                                std::span<const TemplateView> templates_metric, const Matcher& matcher,
                                const Refiner& refiner, const QueryConfig& cfg = {});

}  // namespace metric_align
