#include "metric_align/align.hpp"
#include "metric_align/error.hpp"
#include "metric_align/match.hpp"
#include "synthetic.hpp"

#include <gtest/gtest.h>

#include <random>

namespace metric_align {
namespace {

using testing::default_intrinsics;
using testing::radians;
using testing::rotation_error_deg;

double translation_error(const RigidTransform& a, const RigidTransform& b) {
  return (a.translation() - b.translation()).norm();
}

// Pairs random template pixels with random observation pixels.
class OutlierMatcher final : public Matcher {
 public:
  MatchSet match(const TemplateView& tmpl, const Observation& obs, std::size_t view_index) const override {
    std::vector<Vec2> tp, op;
    for (int y = 0; y < tmpl.mask.height; ++y) {
      for (int x = 0; x < tmpl.mask.width; ++x) {
        if (tmpl.mask.at(x, y)) tp.emplace_back(x, y);
        if (obs.mask.at(x, y)) op.emplace_back(x, y);
      }
    }
    std::mt19937_64 rng(view_index);
    std::uniform_int_distribution<std::size_t> pt(0, tp.size() - 1), po(0, op.size() - 1);
    MatchSet m;
    m.view_index = view_index;
    for (int i = 0; i < 200; ++i) m.pairs.push_back({tp[pt(rng)], op[po(rng)]});
    return m;
  }
};

struct Scene {
  TriangleMesh mesh;
  ScaledModelPose gt;
  Observation obs;
};

Scene blob_scene(std::uint64_t seed, std::mt19937_64& rng, double scale) {
  Scene s;
  s.mesh = testing::normalized_blob(seed);
  s.gt = testing::random_object_pose(rng, scale);
  s.obs = render_observation(s.mesh, default_intrinsics(), s.gt);
  return s;
}

CoarseResult perturbed(const ScaledModelPose& gt, std::mt19937_64& rng, double rot_deg, double trans_m, double scale) {
  CoarseResult c;
  c.pose = ScaledModelPose(scale * gt.scale(),
                           RigidTransform(testing::random_rotation_by(rng, radians(rot_deg)) * gt.pose().rotation(),
                                          gt.pose().translation() + trans_m * testing::random_unit(rng)));
  c.alpha = c.pose.scale();
  return c;
}

TEST(CoarseAlign, RecoversScaleAndPoseExactly) {
  const CameraIntrinsics k = default_intrinsics();
  const TriangleMesh box = testing::normalized_box();
  const auto templates = testing::make_templates(box, k);
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    const ScaledModelPose gt = testing::random_object_pose(rng, 1.37);
    const Observation obs = render_observation(box, k, gt);
    const CoarseResult r = coarse_align(obs, templates, OracleMatcher(gt, MatcherConfig{}));
    EXPECT_NEAR(r.alpha / 1.37, 1.0, 1e-3);
    EXPECT_NEAR(r.pose.scale() / 1.37, 1.0, 1e-3);
    EXPECT_LT(rotation_error_deg(r.pose.pose(), gt.pose()), 0.1);
    EXPECT_LT(translation_error(r.pose.pose(), gt.pose()), 1e-3);
    EXPECT_GE(r.inlier_pairs.size(), 4u);
  }
}

TEST(CoarseAlign, TemplatePoseIsFixedPoint) {
  const CameraIntrinsics k = default_intrinsics();
  const TriangleMesh box = testing::normalized_box();
  const auto templates = testing::make_templates(box, k);
  const TemplateView& t = templates[17];
  const ScaledModelPose gt(1.0, t.camera_from_object);
  const Observation obs = render_observation(box, k, gt);
  const CoarseResult r = coarse_align(obs, templates, OracleMatcher(gt, MatcherConfig{}));
  EXPECT_NEAR(r.alpha, 1.0, 1e-4);
  EXPECT_LT(rotation_error_deg(r.pose.pose(), gt.pose()), 1e-3);
  EXPECT_LT(translation_error(r.pose.pose(), gt.pose()), 1e-4);
}

TEST(CoarseAlign, OutlierOnlyMatchesHaveNoConsensus) {
  const CameraIntrinsics k = default_intrinsics();
  const TriangleMesh box = testing::normalized_box();
  const auto templates = testing::make_templates(box, k);
  std::mt19937_64 rng(2);
  const Observation obs = render_observation(box, k, testing::random_object_pose(rng, 0.1));
  try {
    coarse_align(obs, templates, OutlierMatcher());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoConsensus);
  }
}

TEST(CoarseAlign, LockedScaleKeepsTemplateScale) {
  const CameraIntrinsics k = default_intrinsics();
  const TriangleMesh box = testing::normalized_box();
  const auto templates = scale_templates(testing::make_templates(box, k), 0.1);
  std::mt19937_64 rng(3);
  const ScaledModelPose gt = testing::random_object_pose(rng, 0.1);
  const Observation obs = render_observation(box, k, gt);
  CoarseConfig cfg;
  cfg.lock_scale = true;
  const CoarseResult r = coarse_align(obs, templates, OracleMatcher(gt, MatcherConfig{}), cfg);
  EXPECT_EQ(r.alpha, 1.0);
  EXPECT_DOUBLE_EQ(r.pose.scale(), 0.1);
  EXPECT_LT(rotation_error_deg(r.pose.pose(), gt.pose()), 0.1);
}

TEST(Icp, GroundTruthIsFixedPoint) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const Scene s = blob_scene(100 + trial, rng, 0.1);
    const RefineStep step = refine_step_icp(s.mesh, s.obs, s.gt);
    EXPECT_LT(step.delta_rotation.norm(), 1e-4);
    EXPECT_LT(step.delta_translation.norm(), 1e-5);
    EXPECT_EQ(step.delta_scale, 1.0);
  }
}

TEST(Icp, StepReducesPoseError) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Scene s = blob_scene(200 + trial, rng, 0.1);
    const ScaledModelPose start = perturbed(s.gt, rng, 5.0, 0.02, 1.0).pose;
    const ScaledModelPose next = apply_step(start, refine_step_icp(s.mesh, s.obs, start));
    const double before = rotation_error_deg(start.pose(), s.gt.pose()) / 5.0 +
                          translation_error(start.pose(), s.gt.pose()) / 0.02;
    const double after = rotation_error_deg(next.pose(), s.gt.pose()) / 5.0 +
                         translation_error(next.pose(), s.gt.pose()) / 0.02;
    EXPECT_LT(after, before) << trial;
  }
}

TEST(Icp, NoOverlapThrows) {
  std::mt19937_64 rng(6);
  const Scene s = blob_scene(300, rng, 0.1);
  // Far off to the side, still inside the frame but disjoint from the mask.
  const Vec3 t = s.gt.pose().translation();
  const ScaledModelPose away(s.gt.scale(), RigidTransform(s.gt.pose().rotation(), Vec3(t.x() + 0.3, t.y(), t.z())));
  try {
    refine_step_icp(s.mesh, s.obs, away);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInsufficientOverlap);
  }
}

TEST(ApplyStep, RotatesAboutModelCenter) {
  const ScaledModelPose p(2.0, RigidTransform(exp_so3(Vec3(0.1, 0.2, 0.3)), Vec3(0.1, 0.0, 1.0)));
  RefineStep step;
  step.delta_rotation = Vec3(0, 0.5, 0);
  step.delta_scale = 1.5;
  const ScaledModelPose q = apply_step(p, step);
  EXPECT_EQ(q.pose().translation(), p.pose().translation());
  EXPECT_DOUBLE_EQ(q.scale(), 3.0);
  EXPECT_LT((q.pose().rotation() - exp_so3(Vec3(0, 0.5, 0)) * p.pose().rotation()).norm(), 1e-15);
}

TEST(FineAlign, GroundTruthConvergesImmediately) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 3; ++trial) {
    const Scene s = blob_scene(400 + trial, rng, 0.1);
    CoarseResult c;
    c.pose = s.gt;
    c.alpha = s.gt.scale();
    const AlignmentResult r = fine_align(s.mesh, s.obs, c, IcpRefiner(), OracleMatcher(s.gt, MatcherConfig{}), {});
    EXPECT_TRUE(r.converged);
    EXPECT_LE(r.iterations, 2);
    EXPECT_NEAR(r.cumulative_scale / s.gt.scale(), 1.0, 1e-3);
  }
}

TEST(FineAlign, ConvergesFromPerturbation) {
  std::mt19937_64 rng(8);
  int good = 0;
  const int n = 6;
  for (int trial = 0; trial < n; ++trial) {
    const Scene s = blob_scene(500 + trial, rng, 0.1);
    const CoarseResult c = perturbed(s.gt, rng, 10.0, 0.05, 1.10);
    MatcherConfig mc;
    mc.rng_seed = std::uint64_t(trial);
    const AlignmentResult r = fine_align(s.mesh, s.obs, c, IcpRefiner(), OracleMatcher(s.gt, mc), {});
    double product = r.coarse_scale;
    for (const IterationTrace& it : r.trace) product *= it.step.delta_scale;
    EXPECT_NEAR(r.cumulative_scale / product, 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(r.pose.scale(), r.cumulative_scale);
    const bool ok = rotation_error_deg(r.pose.pose(), s.gt.pose()) < 1.0 &&
                    translation_error(r.pose.pose(), s.gt.pose()) < 0.005 &&
                    std::abs(r.pose.scale() / s.gt.scale() - 1.0) < 0.01;
    good += ok;
  }
  EXPECT_GE(good, n - 1);
}

TEST(FineAlign, WithoutScaleStepScaleErrorStays) {
  std::mt19937_64 rng(9);
  double full = 0.0, ablated = 0.0;
  for (int trial = 0; trial < 4; ++trial) {
    const Scene s = blob_scene(600 + trial, rng, 0.1);
    const CoarseResult c = perturbed(s.gt, rng, 10.0, 0.05, 1.10);
    const OracleMatcher m(s.gt, MatcherConfig{});
    FineConfig off;
    off.scale_reoptimization = false;
    const AlignmentResult a = fine_align(s.mesh, s.obs, c, IcpRefiner(), m, {});
    const AlignmentResult b = fine_align(s.mesh, s.obs, c, IcpRefiner(), m, {}, off);
    full += std::abs(a.pose.scale() / s.gt.scale() - 1.0);
    ablated += std::abs(b.pose.scale() / s.gt.scale() - 1.0);
    EXPECT_DOUBLE_EQ(b.cumulative_scale, c.pose.scale());
  }
  EXPECT_GE(ablated, full);
}

TEST(FineAlign, TraceJsonHasOneEntryPerIteration) {
  std::mt19937_64 rng(10);
  const Scene s = blob_scene(700, rng, 0.1);
  const CoarseResult c = perturbed(s.gt, rng, 5.0, 0.01, 1.05);
  const AlignmentResult r = fine_align(s.mesh, s.obs, c, IcpRefiner(), OracleMatcher(s.gt, MatcherConfig{}), {});
  const nlohmann::json j = trace_to_json(r);
  ASSERT_EQ(j.at("trace").size(), std::size_t(r.iterations));
  for (const auto& it : j.at("trace")) {
    EXPECT_GE(it.at("score").get<double>(), 0.0);
    EXPECT_LE(it.at("score").get<double>(), 1.0);
    EXPECT_GT(it.at("delta_s").get<double>(), 0.0);
  }
}

TEST(ScoreHypothesis, GroundTruthAndDisjoint) {
  std::mt19937_64 rng(11);
  const Scene s = blob_scene(800, rng, 0.1);
  const TriangleMesh metric = scale_mesh(s.mesh, s.gt.scale());
  EXPECT_GE(score_hypothesis(metric, s.obs, s.gt.pose()).score, 0.99);
  const Vec3 t = s.gt.pose().translation();
  const RigidTransform away(s.gt.pose().rotation(), Vec3(t.x() + 0.3, t.y(), t.z()));
  EXPECT_EQ(score_hypothesis(metric, s.obs, away).score, 0.0);
}

TEST(ScoreHypothesis, MonotoneAlongTranslationSweep) {
  const CameraIntrinsics k = default_intrinsics();
  const TriangleMesh metric = make_icosphere(0.05, 4);
  const RigidTransform gt(Mat3::Identity(), Vec3(0, 0, 0.5));
  const Observation obs = render_observation(metric, k, ScaledModelPose(1.0, gt));
  double previous = 2.0;
  for (int i = 0; i <= 24; ++i) {
    const RigidTransform h(Mat3::Identity(), Vec3(0.005 * i, 0, 0.5));
    const double score = score_hypothesis(metric, obs, h).score;
    EXPECT_LE(score, previous) << i;
    previous = score;
  }
  EXPECT_EQ(previous, 0.0);
}

class QueryPose : public ::testing::Test {
 protected:
  void SetUp() override {
    k_ = default_intrinsics();
    mesh_ = testing::normalized_box();
    templates_ = scale_templates(testing::make_templates(mesh_, k_), kScale);
    metric_ = scale_mesh(mesh_, kScale);
  }
  static constexpr double kScale = 0.1;
  CameraIntrinsics k_;
  TriangleMesh mesh_, metric_;
  std::vector<TemplateView> templates_;
};

TEST_F(QueryPose, SelfQueryReturnsAnchorPose) {
  std::mt19937_64 rng(12);
  const ScaledModelPose gt = testing::random_object_pose(rng, kScale);
  const Observation obs = render_observation(mesh_, k_, gt);
  const QueryResult q = estimate_query_pose(metric_, obs, templates_, OracleMatcher(gt, MatcherConfig{}), IcpRefiner());
  EXPECT_LT(rotation_error_deg(q.pose, gt.pose()), 0.5);
  EXPECT_LT(translation_error(q.pose, gt.pose()), 0.002);
}

TEST_F(QueryPose, ViewpointChangeAndRelativePose) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 3; ++trial) {
    const ScaledModelPose anchor = testing::random_object_pose(rng, kScale);
    // Rotate the object by 30 degrees about its center: a 30 degree viewpoint change.
    const ScaledModelPose query(kScale, RigidTransform(testing::random_rotation_by(rng, radians(30.0)) *
                                                           anchor.pose().rotation(),
                                                       anchor.pose().translation()));
    const Observation qa = render_observation(mesh_, k_, anchor);
    const Observation qq = render_observation(mesh_, k_, query);
    const IcpRefiner refiner;
    const QueryResult ra = estimate_query_pose(metric_, qa, templates_, OracleMatcher(anchor, MatcherConfig{}), refiner);
    const QueryResult rq = estimate_query_pose(metric_, qq, templates_, OracleMatcher(query, MatcherConfig{}), refiner);
    EXPECT_LT(rotation_error_deg(rq.pose, query.pose()), 1.0);
    EXPECT_LT(translation_error(rq.pose, query.pose()), 0.005);
    const RigidTransform est = relative_pose(ra.pose, rq.pose);
    const RigidTransform truth = relative_pose(anchor.pose(), query.pose());
    EXPECT_LT(rotation_error_deg(est, truth), 1.0);
    EXPECT_LT(translation_error(est, truth), 0.005);
  }
}

TEST_F(QueryPose, EmptyTemplatesRejected) {
  std::mt19937_64 rng(14);
  const ScaledModelPose gt = testing::random_object_pose(rng, kScale);
  const Observation obs = render_observation(mesh_, k_, gt);
  EXPECT_THROW(estimate_query_pose(metric_, obs, {}, OracleMatcher(gt, MatcherConfig{}), IcpRefiner()), Error);
}

}  // namespace
}  // namespace metric_align
