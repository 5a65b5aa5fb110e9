#pragma once

#include "metric_align/geom.hpp"
#include "metric_align/raster.hpp"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

namespace metric_align {

struct PixelPair {
  Vec2 template_pixel;
  Vec2 observation_pixel;
};

struct MatchSet {
  std::size_t view_index = 0;
  std::vector<PixelPair> pairs;
  /// Set by the oracle matcher: true where the pair was replaced by an outlier.
  std::vector<bool> outlier_flags;

  std::size_t score() const { return pairs.size(); }
};

struct MatcherConfig {
  double pixel_noise_sigma = 0.0;
  double outlier_fraction = 0.0;
  int max_matches = 500;
  std::uint64_t rng_seed = 0;
  /// Oracle only: a surface point pairs up only if its viewing rays in the two
  /// views differ by at most this angle, mimicking the viewpoint range over
  /// which local descriptors still match. 180 disables the gate.
  double max_viewpoint_change_deg = 30.0;
  /// Lowe ratio for the depth-patch matcher (strict inequality).
  double ratio_test = 0.8;
  /// Absolute descriptor-distance cap for the depth-patch matcher.
  double max_descriptor_distance = std::numeric_limits<double>::infinity();

  void validate() const;
};

/// Correspondence provider between a rendered template and an observation.
class Matcher {
 public:
  virtual ~Matcher() = default;
  virtual MatchSet match(const TemplateView& tmpl, const Observation& obs, std::size_t view_index) const = 0;
};

/// Ground-truth driven matcher for controlled experiments. `gt_obs_pose`
/// maps the reference (normalized) model into the observation camera.
MatchSet oracle_match(const TemplateView& tmpl, const Observation& obs, const ScaledModelPose& gt_obs_pose,
                      const MatcherConfig& cfg, std::size_t view_index = 0);

class OracleMatcher final : public Matcher {
 public:
  OracleMatcher(const ScaledModelPose& gt_obs_pose, const MatcherConfig& cfg) : gt_(gt_obs_pose), cfg_(cfg) {
    cfg_.validate();
  }
  MatchSet match(const TemplateView& tmpl, const Observation& obs, std::size_t view_index) const override;

 private:
  ScaledModelPose gt_;
  MatcherConfig cfg_;
};

/// Geometric matcher on depth alone: difference-of-box keypoints on inverse
/// depth, ring/sector depth-patch descriptors normalized for object size and
/// distance and compared under cyclic rotation, ratio test plus mutual check.
MatchSet depth_patch_match(const TemplateView& tmpl, const Observation& obs, const MatcherConfig& cfg,
                           std::size_t view_index = 0);

/// Keypoint locations used by the depth-patch matcher.
std::vector<Vec2> detect_depth_keypoints(const DepthMap& depth, const Mask& mask, const CameraIntrinsics& k);

class DepthPatchMatcher final : public Matcher {
 public:
  explicit DepthPatchMatcher(const MatcherConfig& cfg) : cfg_(cfg) { cfg_.validate(); }
  MatchSet match(const TemplateView& tmpl, const Observation& obs, std::size_t view_index) const override;

 private:
  MatcherConfig cfg_;
};

/// Highest score wins, ties to the lowest view index. Throws kAllEmpty when
/// every set is empty and kInvalidArgument for an empty list.
const MatchSet& select_best_view(std::span<const MatchSet> matches);

/// Runs the matcher on every template (in parallel).
std::vector<MatchSet> match_all(const Matcher& matcher, std::span<const TemplateView> templates,
                                const Observation& obs);

/// One JSON object per line: {view, tu, tv, ou, ov}.
void write_match_dump(const std::filesystem::path& path, std::span<const MatchSet> matches);

}  // namespace metric_align
