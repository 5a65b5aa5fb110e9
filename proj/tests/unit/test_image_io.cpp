#include "metric_align/error.hpp"
#include "metric_align/image.hpp"
#include "metric_align/io.hpp"
#include "metric_align/mesh.hpp"
#include "metric_align/raster.hpp"
#include "synthetic.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <random>

#include <unistd.h>

namespace metric_align {
namespace {

namespace fs = std::filesystem;

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("ma_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + "_" +
            std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

using PngTest = TempDir;
using MeshIo = TempDir;
using ObservationIo = TempDir;

TEST_F(PngTest, Gray8AndGray16RoundTrip) {
  Image<std::uint8_t> a(13, 7);
  Image<std::uint16_t> b(5, 9);
  for (std::size_t i = 0; i < a.size(); ++i) a.data[i] = std::uint8_t(i * 37);
  for (std::size_t i = 0; i < b.size(); ++i) b.data[i] = std::uint16_t(i * 1499);
  write_png_gray8(dir_ / "a.png", a);
  write_png_gray16(dir_ / "b.png", b);
  EXPECT_EQ(read_png_gray8(dir_ / "a.png"), a);
  EXPECT_EQ(read_png_gray16(dir_ / "b.png"), b);
}

TEST_F(PngTest, DepthQuantizedToTenthMillimeter) {
  DepthMap d(4, 3, 0.0);
  d.at(0, 0) = 1.23456;
  d.at(3, 2) = 0.5;
  d.at(1, 1) = 6.5535;
  write_depth_png(dir_ / "d.png", d);
  const DepthMap back = read_depth_png(dir_ / "d.png");
  ASSERT_EQ(back.width, 4);
  EXPECT_NEAR(back.at(0, 0), 1.2346, 1e-12);
  EXPECT_DOUBLE_EQ(back.at(3, 2), 0.5);
  EXPECT_NEAR(back.at(1, 1), 6.5535, 1e-12);
  EXPECT_EQ(back.at(2, 2), 0.0);

  d.at(2, 2) = 7.0;
  try {
    write_depth_png(dir_ / "bad.png", d);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kFormatError);
  }
}

TEST_F(PngTest, MaskIsBinary255) {
  Mask m(3, 3, 0);
  m.at(1, 1) = 1;
  m.at(2, 0) = 200;
  write_mask_png(dir_ / "m.png", m);
  const auto raw = read_png_gray8(dir_ / "m.png");
  EXPECT_EQ(raw.at(1, 1), 255);
  EXPECT_EQ(raw.at(2, 0), 255);
  EXPECT_EQ(raw.at(0, 0), 0);
  EXPECT_EQ(count_nonzero(read_mask_png(dir_ / "m.png")), 2u);
}

TEST_F(PngTest, MissingOrCorruptFiles) {
  try {
    read_png_gray8(dir_ / "nope.png");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIoFailure);
  }
  std::ofstream(dir_ / "junk.png") << "not a png";
  EXPECT_THROW(read_png_gray8(dir_ / "junk.png"), Error);
}

TEST(Json, PoseAndIntrinsicsRoundTrip) {
  std::mt19937_64 rng(1);
  const RigidTransform t(testing::random_rotation(rng), Vec3(0.1, -0.2, 0.7));
  const RigidTransform back = rigid_transform_from_json(to_json(t));
  EXPECT_LT((back.matrix() - t.matrix()).cwiseAbs().maxCoeff(), 1e-15);

  const CameraIntrinsics k{600.5, 601.25, 321.0, 239.5, 640, 480};
  const CameraIntrinsics kb = intrinsics_from_json(to_json(k));
  EXPECT_EQ(kb.fx, k.fx);
  EXPECT_EQ(kb.cy, k.cy);
  EXPECT_EQ(kb.height, k.height);

  const ScaledModelPose p(0.083, t);
  const ScaledModelPose pb = scaled_pose_from_json(to_json(p));
  EXPECT_EQ(pb.scale(), p.scale());
  EXPECT_LT((pb.pose().matrix() - t.matrix()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST_F(MeshIo, ObjFanTriangulationAndDegenerateFaces) {
  std::ofstream(dir_ / "q.obj") << "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 2 2 2\n"
                                   "vn 0 0 1\nf 1//1 2//1 3//1 4//1\nf 1 1 2\n";
  const TriangleMesh m = load_mesh(dir_ / "q.obj");
  EXPECT_EQ(m.vertices.size(), 5u);
  ASSERT_EQ(m.faces.size(), 2u);
  EXPECT_EQ(m.faces[0], (std::array<int, 3>{0, 1, 2}));
  EXPECT_EQ(m.faces[1], (std::array<int, 3>{0, 2, 3}));
}

TEST_F(MeshIo, ObjBadIndexIsFormatError) {
  std::ofstream(dir_ / "b.obj") << "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n";
  try {
    load_mesh(dir_ / "b.obj");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kFormatError);
  }
}

TEST_F(MeshIo, ObjAndPlyRoundTrip) {
  const TriangleMesh m = make_blob(3, 0.07, 2);
  write_obj(m, dir_ / "m.obj");
  write_ply(m, dir_ / "m.ply");
  const TriangleMesh a = load_mesh(dir_ / "m.obj");
  const TriangleMesh b = load_mesh(dir_ / "m.ply");
  ASSERT_EQ(a.vertices.size(), m.vertices.size());
  ASSERT_EQ(b.vertices.size(), m.vertices.size());
  EXPECT_EQ(a.faces, m.faces);
  EXPECT_EQ(b.faces, m.faces);
  for (std::size_t i = 0; i < m.vertices.size(); ++i) {
    EXPECT_LT((a.vertices[i] - m.vertices[i]).norm(), 1e-12);
    // float32 storage
    EXPECT_LT((b.vertices[i] - m.vertices[i]).norm(), 1e-7);
  }
}

TEST(Mesh, NormalizeGivesUnitSphereAboutBoxCenter) {
  TriangleMesh box = make_box(2.0, 1.0, 0.5);
  for (Vec3& v : box.vertices) v += Vec3(3, -1, 7);
  const TriangleMesh n = normalize_mesh(box);
  EXPECT_EQ(n.frame, MeshFrame::kNormalized);
  EXPECT_NEAR(bounding_radius(n), 1.0, 1e-12);
  const auto [lo, hi] = bounding_box(n);
  EXPECT_LT((lo + hi).norm(), 1e-12);
  // Aspect is preserved.
  EXPECT_NEAR((hi - lo).x() / (hi - lo).y(), 2.0, 1e-12);
  EXPECT_THROW(normalize_mesh(TriangleMesh{}), Error);
}

TEST(Mesh, ScaleMeshIsMetric) {
  const TriangleMesh n = testing::normalized_box();
  const TriangleMesh s = scale_mesh(n, 0.05);
  EXPECT_EQ(s.frame, MeshFrame::kMetric);
  EXPECT_NEAR(bounding_radius(s), 0.05, 1e-12);
}

TEST(SampleDepth, ExactOnTiltedPlane) {
  // Plane n.X = d seen by a pinhole camera: inverse depth is affine in pixels.
  const CameraIntrinsics k = testing::default_intrinsics();
  const Vec3 normal = Vec3(0.2, -0.3, 1.0).normalized();
  const double d = 1.2;
  DepthMap depth(k.width, k.height);
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const Vec3 ray = backproject(k, Vec2(x, y), 1.0);
      depth.at(x, y) = d / normal.dot(ray);
    }
  }
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> ux(10, 600), uy(10, 450);
  for (int i = 0; i < 500; ++i) {
    const Vec2 px(ux(rng), uy(rng));
    const auto z = sample_depth_strict(depth, px);
    ASSERT_TRUE(z.has_value());
    const double truth = d / normal.dot(backproject(k, px, 1.0));
    EXPECT_NEAR(*z, truth, 1e-12 * truth);
  }
}

TEST(SampleDepth, StepEdgeFallsBackToNearest) {
  DepthMap depth(4, 4, 1.0);
  for (int y = 0; y < 4; ++y) depth.at(2, y) = depth.at(3, y) = 2.0;
  EXPECT_FALSE(sample_depth_strict(depth, Vec2(1.5, 1.5)).has_value());
  EXPECT_DOUBLE_EQ(*sample_depth(depth, Vec2(1.4, 1.5)), 1.0);
  EXPECT_DOUBLE_EQ(*sample_depth(depth, Vec2(1.6, 1.5)), 2.0);
  Mask mask(4, 4, 0);
  EXPECT_FALSE(sample_depth(depth, Vec2(1, 1), &mask).has_value());
}

TEST(FillHoles, InteriorHoleFilledUnfillableDropped) {
  Observation obs;
  obs.intrinsics = {100, 100, 5, 5, 10, 10};
  obs.depth = DepthMap(10, 10, 0.0);
  obs.mask = Mask(10, 10, 0);
  for (int y = 2; y < 8; ++y) {
    for (int x = 2; x < 8; ++x) {
      obs.mask.at(x, y) = 1;
      obs.depth.at(x, y) = 0.8;
    }
  }
  obs.depth.at(4, 4) = 0.0;
  obs.mask.at(0, 0) = 1;  // isolated, no depth anywhere near
  fill_depth_holes(obs);
  EXPECT_DOUBLE_EQ(obs.depth.at(4, 4), 0.8);
  EXPECT_EQ(obs.mask.at(0, 0), 0);
  EXPECT_NO_THROW(obs.validate());
}

TEST_F(ObservationIo, SaveLoadAndValidate) {
  const CameraIntrinsics k = testing::default_intrinsics();
  const TriangleMesh mesh = testing::normalized_box();
  const ScaledModelPose pose(0.06, RigidTransform(exp_so3(Vec3(0.3, 0.5, 0.1)), Vec3(0.0, 0.0, 0.45)));
  const Observation obs = render_observation(mesh, k, pose);
  save_observation(dir_ / "obs", obs);
  save_ground_truth(dir_ / "obs", pose);
  const Observation back = load_observation(dir_ / "obs");
  EXPECT_EQ(back.mask, obs.mask);
  for (std::size_t i = 0; i < obs.depth.size(); ++i) EXPECT_NEAR(back.depth.data[i], obs.depth.data[i], 0.5e-4);
  const auto gt = load_ground_truth(dir_ / "obs");
  ASSERT_TRUE(gt.has_value());
  EXPECT_EQ(gt->scale(), 0.06);
  EXPECT_FALSE(load_ground_truth(dir_).has_value());

  fs::remove(dir_ / "obs" / "mask.png");
  try {
    load_observation(dir_ / "obs");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIoFailure);
  }
}

TEST_F(ObservationIo, TemplateBundleRoundTrip) {
  const CameraIntrinsics k{150, 150, 80, 60, 160, 120};
  const TriangleMesh mesh = testing::normalized_box();
  const auto templates = testing::make_templates(mesh, k, 6);
  save_template_bundle(dir_ / "t", templates);
  const auto back = load_template_bundle(dir_ / "t");
  ASSERT_EQ(back.size(), templates.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].mask, templates[i].mask);
    EXPECT_LT((back[i].camera_from_object.matrix() - templates[i].camera_from_object.matrix()).cwiseAbs().maxCoeff(),
              1e-15);
    for (std::size_t p = 0; p < back[i].depth.size(); ++p) {
      EXPECT_NEAR(back[i].depth.data[p], templates[i].depth.data[p], 0.5e-4);
    }
  }
}

}  // namespace
}  // namespace metric_align
