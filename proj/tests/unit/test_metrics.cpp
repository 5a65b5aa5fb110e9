#include "metric_align/error.hpp"
#include "metric_align/metrics.hpp"
#include "metric_align/raster.hpp"
#include "synthetic.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

namespace metric_align {
namespace {

using testing::default_intrinsics;

RigidTransform random_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.1, 0.1), z(0.5, 1.0);
  return {testing::random_rotation(rng), Vec3(u(rng), u(rng), z(rng))};
}

PointCloud random_cloud(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> g(0.0, 0.05);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.emplace_back(g(rng), g(rng), g(rng));
  return c;
}

// Direct-loop oracles.
double brute_add(const PointCloud& m, const RigidTransform& g, const RigidTransform& e) {
  double s = 0;
  for (const Vec3& p : m.points) s += (g * p - e * p).norm();
  return s / double(m.points.size());
}

double brute_nearest_mean(const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
  double s = 0;
  for (const Vec3& a : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& b : to) best = std::min(best, (a - b).norm());
    s += best;
  }
  return s / double(from.size());
}

double brute_adds(const PointCloud& m, const RigidTransform& g, const RigidTransform& e) {
  std::vector<Vec3> pg, pe;
  for (const Vec3& p : m.points) {
    pg.push_back(g * p);
    pe.push_back(e * p);
  }
  return brute_nearest_mean(pg, pe);
}

double brute_mssd(const TriangleMesh& mesh, const SymmetrySet& sym, const RigidTransform& g, const RigidTransform& e) {
  double best = std::numeric_limits<double>::infinity();
  for (const RigidTransform& s : sym.transforms) {
    double worst = 0;
    for (const Vec3& v : mesh.vertices) worst = std::max(worst, (e * v - g * (s * v)).norm());
    best = std::min(best, worst);
  }
  return best;
}

double brute_mspd(const TriangleMesh& mesh, const SymmetrySet& sym, const CameraIntrinsics& k, const RigidTransform& g,
                  const RigidTransform& e) {
  double best = std::numeric_limits<double>::infinity();
  for (const RigidTransform& s : sym.transforms) {
    double worst = 0;
    for (const Vec3& v : mesh.vertices) worst = std::max(worst, (project(k, e * v) - project(k, g * (s * v))).norm());
    best = std::min(best, worst);
  }
  return best;
}

SymmetrySet cube_z4() {
  std::vector<RigidTransform> t;
  for (int i = 1; i < 4; ++i) t.emplace_back(exp_so3(Vec3(0, 0, M_PI / 2 * i)), Vec3::Zero());
  return SymmetrySet::discrete(t);
}

TEST(Add, Basics) {
  std::mt19937_64 rng(1);
  const PointCloud m = random_cloud(rng, 500);
  const RigidTransform g = random_pose(rng);
  EXPECT_EQ(add(m, g, g), 0.0);
  const RigidTransform shifted(g.rotation(), g.translation() + Vec3(0.01, 0, 0));
  EXPECT_NEAR(add(m, g, shifted), 0.01, 1e-15);
}

TEST(Add, MatchesDirectLoop) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    const PointCloud m = random_cloud(rng, 200);
    const RigidTransform g = random_pose(rng), e = random_pose(rng);
    EXPECT_NEAR(add(m, g, e), brute_add(m, g, e), 1e-12);
  }
}

TEST(Adds, MatchesDirectLoopAndBoundedByAdd) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const PointCloud m = random_cloud(rng, 200);
    const RigidTransform g = random_pose(rng), e = random_pose(rng);
    const double a = adds(m, g, e);
    EXPECT_NEAR(a, brute_adds(m, g, e), 1e-12);
    EXPECT_LE(a, add(m, g, e));
    EXPECT_EQ(adds(m, g, g), 0.0);
  }
}

TEST(Adds, SphereRotationIsAbsorbed) {
  const TriangleMesh sphere = make_icosphere(0.05, 4);
  const PointCloud m{sphere.vertices};
  std::mt19937_64 rng(4);
  // Nearest-vertex spacing bounds the ADD-S of any rotation about the center.
  double spacing = 0;
  for (const auto& f : sphere.faces) {
    spacing = std::max(spacing, (sphere.vertices[std::size_t(f[0])] - sphere.vertices[std::size_t(f[1])]).norm());
  }
  for (int i = 0; i < 10; ++i) {
    const RigidTransform g = random_pose(rng);
    const RigidTransform e(g.rotation() * testing::random_rotation(rng), g.translation());
    EXPECT_LT(adds(m, g, e), spacing);
    EXPECT_GT(add(m, g, e), spacing);
  }
}

TEST(AddRecall, ExactAndThreshold) {
  std::mt19937_64 rng(5);
  const PointCloud m = random_cloud(rng, 100);
  const RigidTransform g = random_pose(rng);
  const std::vector<PosePair> exact{{g, g}, {g, g}};
  EXPECT_EQ(add_recall(m, 0.2, exact), 1.0);
  EXPECT_EQ(add_auc(m, exact), 1.0);
  // ADD of 0.2 d with d = 0.1.
  const std::vector<PosePair> off{{g, RigidTransform(g.rotation(), g.translation() + Vec3(0, 0.02, 0))}};
  EXPECT_EQ(add_recall(m, 0.1, off), 0.0);
}

TEST(Auc, HandComputedCase) {
  // Recall steps: 1/3 from 0.02, 2/3 from 0.05, never reaches 0.2 within [0, 0.1].
  const std::vector<double> errors{0.02, 0.05, 0.2};
  const double expected = ((0.1 - 0.02) + (0.1 - 0.05)) / 3.0 / 0.1;
  EXPECT_NEAR(auc(errors, 0.1), expected, 1e-15);
  EXPECT_THROW(auc(errors, 0.0), Error);
}

TEST(Mssd, OraclesAndSymmetry) {
  const TriangleMesh cube = make_box(0.1, 0.1, 0.1);
  std::mt19937_64 rng(6);
  const RigidTransform g = random_pose(rng);
  EXPECT_EQ(mssd(cube, SymmetrySet::identity_only(), g, g), 0.0);
  const RigidTransform e = compose(g, RigidTransform(exp_so3(Vec3(0, 0, M_PI / 2)), Vec3::Zero()));
  EXPECT_NEAR(mssd(cube, cube_z4(), g, e), 0.0, 1e-12);
  EXPECT_GT(mssd(cube, SymmetrySet::identity_only(), g, e), 0.05);

  const TriangleMesh blob = make_blob(3, 0.05, 2);
  for (int i = 0; i < 100; ++i) {
    const RigidTransform a = random_pose(rng), b = random_pose(rng);
    EXPECT_NEAR(mssd(blob, SymmetrySet::identity_only(), a, b), brute_mssd(blob, SymmetrySet::identity_only(), a, b),
                1e-12);
    EXPECT_NEAR(mssd(cube, cube_z4(), a, b), brute_mssd(cube, cube_z4(), a, b), 1e-12);
  }
}

TEST(Mspd, OraclesAndSymmetry) {
  const CameraIntrinsics k = default_intrinsics();
  const TriangleMesh cube = make_box(0.1, 0.1, 0.1);
  std::mt19937_64 rng(7);
  const RigidTransform g = random_pose(rng);
  EXPECT_EQ(mspd(cube, SymmetrySet::identity_only(), k, g, g), 0.0);
  const RigidTransform e = compose(g, RigidTransform(exp_so3(Vec3(0, 0, M_PI / 2)), Vec3::Zero()));
  EXPECT_NEAR(mspd(cube, cube_z4(), k, g, e), 0.0, 1e-9);

  // Centered object moved along the optical axis: the projection shrinks a little.
  const RigidTransform c(Mat3::Identity(), Vec3(0, 0, 0.6));
  const RigidTransform back(Mat3::Identity(), Vec3(0, 0, 0.61));
  const double axial = mspd(cube, SymmetrySet::identity_only(), k, c, back);
  EXPECT_GT(axial, 0.0);
  EXPECT_LT(axial, 5.0);
  EXPECT_NEAR(axial, brute_mspd(cube, SymmetrySet::identity_only(), k, c, back), 1e-12);

  const TriangleMesh blob = make_blob(4, 0.05, 2);
  for (int i = 0; i < 100; ++i) {
    const RigidTransform a = random_pose(rng), b = random_pose(rng);
    EXPECT_NEAR(mspd(blob, SymmetrySet::identity_only(), k, a, b),
                brute_mspd(blob, SymmetrySet::identity_only(), k, a, b), 1e-9);
  }
  const RigidTransform behind(Mat3::Identity(), Vec3(0, 0, -1));
  try {
    mspd(cube, SymmetrySet::identity_only(), k, c, behind);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::kBehindCamera);
  }
}

TEST(Vsd, ExactAndDisjoint) {
  const CameraIntrinsics k = default_intrinsics();
  const TriangleMesh blob = make_blob(5, 0.05, 3);
  const RigidTransform g(exp_so3(Vec3(0.2, 0.1, 0.3)), Vec3(0, 0, 0.6));
  const DepthMap obs = rasterize(blob, k, g).depth;
  EXPECT_EQ(vsd(blob, k, g, g, obs, 0.02), 0.0);
  const RigidTransform away(g.rotation(), Vec3(0.3, 0, 0.6));
  EXPECT_EQ(vsd(blob, k, g, away, obs, 0.02), 1.0);
  const RigidTransform behind(g.rotation(), Vec3(0, 0, -0.6));
  EXPECT_EQ(vsd(blob, k, g, behind, obs, 0.02), 1.0);
}

TEST(Vsd, ShiftedPlane) {
  const CameraIntrinsics k = default_intrinsics();
  const TriangleMesh plane = make_plane(4.0, 4.0);
  const double tau = 0.02;
  const RigidTransform g(Mat3::Identity(), Vec3(0, 0, 1.0));
  const DepthMap obs = rasterize(plane, k, g).depth;
  const RigidTransform half(Mat3::Identity(), Vec3(0, 0, 1.0 + tau / 2));
  const RigidTransform twice(Mat3::Identity(), Vec3(0, 0, 1.0 + 2 * tau));
  EXPECT_EQ(vsd(plane, k, g, half, obs, tau), 0.0);
  EXPECT_EQ(vsd(plane, k, g, twice, obs, tau), 1.0);
}

TEST(Recall, AllZeroAndAllInfinite) {
  AnnotationErrors zero;
  zero.vsd.assign(10, 0.0);
  AnnotationErrors inf;
  inf.vsd.assign(10, 1.0);
  inf.mssd = inf.mspd = std::numeric_limits<double>::infinity();
  const RecallSummary a = bop_average_recall(std::vector<AnnotationErrors>(3, zero), 640);
  EXPECT_EQ(a.vsd_recall, 1.0);
  EXPECT_EQ(a.mssd_recall, 1.0);
  EXPECT_EQ(a.mspd_recall, 1.0);
  EXPECT_EQ(a.ar, 1.0);
  EXPECT_EQ(bop_average_recall(std::vector<AnnotationErrors>(3, inf), 640).ar, 0.0);
}

TEST(Recall, HandBuiltThreeAnnotations) {
  AnnotationErrors a;  // perfect
  a.vsd.assign(10, 0.0);
  AnnotationErrors b;
  b.vsd.assign(10, 0.22);  // under theta 0.25..0.5: 6 of 10
  b.mssd = 0.12;           // under 0.15..0.5 x 1.0: 8 of 10
  b.mspd = 24.0;           // under 25..50 px: 6 of 10
  AnnotationErrors c;
  c.vsd.assign(10, 1.0);
  c.mssd = c.mspd = std::numeric_limits<double>::infinity();
  const std::vector<AnnotationErrors> errs{a, b, c};
  const RecallSummary r = bop_average_recall(errs, 640);
  EXPECT_NEAR(r.vsd_recall, 160.0 / 300.0, 1e-15);
  EXPECT_NEAR(r.mssd_recall, 18.0 / 30.0, 1e-15);
  EXPECT_NEAR(r.mspd_recall, 16.0 / 30.0, 1e-15);
  EXPECT_NEAR(r.ar, (r.vsd_recall + r.mssd_recall + r.mspd_recall) / 3.0, 1e-12);
  // MSPD thresholds scale with image width.
  EXPECT_NEAR(bop_average_recall(errs, 1280).mspd_recall, 18.0 / 30.0, 1e-15);
}

TEST(Chamfer, Cases) {
  std::mt19937_64 rng(8);
  const PointCloud x = random_cloud(rng, 300);
  EXPECT_EQ(chamfer(x, x), 0.0);
  EXPECT_EQ(chamfer(PointCloud{{Vec3(0, 0, 0)}}, PointCloud{{Vec3(1, 0, 0)}}), 1.0);
  for (int i = 0; i < 100; ++i) {
    const PointCloud a = random_cloud(rng, 150), b = random_cloud(rng, 120);
    const double truth = 0.5 * (brute_nearest_mean(a.points, b.points) + brute_nearest_mean(b.points, a.points));
    EXPECT_NEAR(chamfer(a, b), truth, 1e-12);
  }
  EXPECT_THROW(chamfer(PointCloud{}, x), Error);
}

TEST(Diameter, Cases) {
  EXPECT_NEAR(diameter(make_box(1, 1, 1)), std::sqrt(3.0), 1e-15);
  const std::vector<Vec3> two{Vec3(0, 0, 0), Vec3(0, 2, 0)};
  EXPECT_EQ(diameter(two), 2.0);
  std::mt19937_64 rng(9);
  for (int i = 0; i < 20; ++i) {
    const PointCloud c = random_cloud(rng, 400);
    double truth = 0;
    for (const Vec3& a : c.points) {
      for (const Vec3& b : c.points) truth = std::max(truth, (a - b).norm());
    }
    EXPECT_EQ(diameter(c.points), truth);
  }
}

TEST(ModelPoints, SamplesLargeMeshes) {
  const TriangleMesh small = make_box(1, 1, 1);
  EXPECT_EQ(model_points(small).points.size(), small.vertices.size());
  const TriangleMesh big = make_icosphere(0.05, 6);
  ASSERT_GT(big.vertices.size(), 10000u);
  const PointCloud p = model_points(big);
  EXPECT_EQ(p.points.size(), 2048u);
  for (const Vec3& v : p.points) EXPECT_NEAR(v.norm(), 0.05, 1e-3);
  EXPECT_EQ(model_points(big).points, p.points);
}

TEST(Report, CsvHasMeanRow) {
  const auto dir = std::filesystem::temp_directory_path() / "ma_metrics_report";
  std::filesystem::create_directories(dir);
  std::vector<ReportRow> rows(2);
  rows[0] = {"000000", "0", "1", {0.01, 0.005, 1, 1, 1, 1, 0.002}};
  rows[1] = {"000000", "1", "1", {0.03, 0.015, 0, 0.5, 1, 0.5, 0.004}};
  write_report_csv(dir / "r.csv", rows);
  std::ifstream f(dir / "r.csv");
  std::vector<std::string> lines;
  for (std::string l; std::getline(f, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0].rfind("scene,image,obj,add,adds", 0), 0u);
  EXPECT_EQ(lines[3].rfind("mean", 0), 0u);
  const MetricReport m = mean_report(rows);
  EXPECT_DOUBLE_EQ(m.add, 0.02);
  EXPECT_DOUBLE_EQ(m.ar, 0.75);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace metric_align
