#include "metric_align/error.hpp"
#include "metric_align/io.hpp"
#include "metric_align/mesh.hpp"
#include "metric_align/raster.hpp"
#include "metric_align/scenegen.hpp"
#include "synthetic.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include <unistd.h>

namespace metric_align {
namespace {

namespace fs = std::filesystem;

MeshLibrary builtin_library() { return {builtin_targets(), builtin_occluders()}; }

SceneConfig small_config() {
  SceneConfig c;
  c.target_count = 2;
  c.occluder_count = 3;
  c.camera_count = 4;
  c.intrinsics = {286.0, 286.0, 160.0, 120.0, 320, 240};
  c.rng_seed = 17;
  return c;
}

fs::path temp_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("ma_scenegen_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

bool no_deep_overlap(const SceneInstance& s) {
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    for (std::size_t j = i + 1; j < s.objects.size(); ++j) {
      const PlacedObject& a = s.objects[i];
      const PlacedObject& b = s.objects[j];
      const double d = (a.world_from_object.translation() - b.world_from_object.translation()).norm();
      if (a.radius + b.radius - d > 0.1 * std::min(a.radius, b.radius) + 1e-12) return false;
    }
  }
  return true;
}

TEST(SceneConfig, ValidationAndJsonRoundTrip) {
  SceneConfig c = small_config();
  c.roll_noise_sigma = 0.2;
  const SceneConfig back = scene_config_from_json(to_json(c));
  EXPECT_EQ(back.target_count, 2);
  EXPECT_EQ(back.camera_count, 4);
  EXPECT_EQ(back.rng_seed, 17u);
  EXPECT_NEAR(back.roll_noise_sigma, 0.2, 1e-15);
  EXPECT_EQ(back.intrinsics.width, 320);
  EXPECT_EQ(scene_config_from_json(nlohmann::json::object()).camera_count, SceneConfig{}.camera_count);

  SceneConfig bad;
  bad.target_count = 0;
  EXPECT_THROW(bad.validate(), Error);
  bad = {};
  bad.distance_min = 0.0;
  EXPECT_THROW(bad.validate(), Error);
  bad = {};
  bad.bounds_max = bad.bounds_min;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Builtins, TargetSizes) {
  const auto targets = builtin_targets();
  ASSERT_EQ(targets.size(), 4u);
  for (const TriangleMesh& t : targets) {
    EXPECT_GE(bounding_radius(t), 0.05 - 1e-9);
    EXPECT_LE(bounding_radius(t), 0.09 + 1e-9);
  }
  EXPECT_EQ(builtin_occluders().size(), 10u);
}

TEST(PlaceObjects, SingleObjectWithinBounds) {
  const MeshLibrary lib = builtin_library();
  SceneConfig c;
  c.target_count = 1;
  c.occluder_count = 0;
  c.drop_to_plane = false;
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    const SceneInstance s = place_objects(lib, c, rng);
    ASSERT_EQ(s.objects.size(), 1u);
    const Vec3 t = s.objects[0].world_from_object.translation();
    EXPECT_TRUE((t.array() >= c.bounds_min.array()).all() && (t.array() <= c.bounds_max.array()).all());
  }
}

TEST(PlaceObjects, DropRestsOnPlane) {
  const MeshLibrary lib = builtin_library();
  SceneConfig c;
  std::mt19937_64 rng(2);
  const SceneInstance s = place_objects(lib, c, rng);
  for (const PlacedObject& o : s.objects) {
    const TriangleMesh& m = o.is_target ? lib.targets[o.mesh_id] : lib.occluders[o.mesh_id];
    double lowest = std::numeric_limits<double>::infinity();
    for (const Vec3& v : m.vertices) lowest = std::min(lowest, (o.world_from_object * v).z());
    EXPECT_NEAR(lowest, c.bounds_min.z(), 1e-12);
  }
}

TEST(PlaceObjects, ImpossiblePackingFails) {
  MeshLibrary lib;
  lib.targets = {make_icosphere(1.0, 1)};
  SceneConfig c;
  c.target_count = 14;
  c.occluder_count = 0;
  c.bounds_min = Vec3(0, 0, 0);
  c.bounds_max = Vec3(0.1, 0.1, 0.1);
  std::mt19937_64 rng(3);
  try {
    place_objects(lib, c, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kPlacementFailed);
  }
}

TEST(PlaceObjects, OverlapInvariantOverManyScenes) {
  const MeshLibrary lib = builtin_library();
  const SceneConfig c;
  std::mt19937_64 rng(4);
  for (int i = 0; i < 1000; ++i) ASSERT_TRUE(no_deep_overlap(place_objects(lib, c, rng))) << i;
}

TEST(SampleCameras, ZeroNoiseLooksAtCenter) {
  const MeshLibrary lib = builtin_library();
  SceneConfig c;
  c.eccentric_noise_sigma = 0.0;
  c.roll_noise_sigma = 0.0;
  std::mt19937_64 rng(5);
  const SceneInstance s = place_objects(lib, c, rng);
  const Vec3 center = scene_center(s);
  for (const RigidTransform& cam : sample_cameras(s, c, rng)) {
    const Vec3 p = cam * center;
    EXPECT_NEAR(p.x(), 0.0, 1e-9);
    EXPECT_NEAR(p.y(), 0.0, 1e-9);
    EXPECT_GT(p.z(), 0.0);
  }
}

TEST(SampleCameras, DistancesWithinRange) {
  const MeshLibrary lib = builtin_library();
  const SceneConfig c;
  std::mt19937_64 rng(6);
  const SceneInstance s = place_objects(lib, c, rng);
  const Vec3 center = scene_center(s);
  for (const RigidTransform& cam : sample_cameras(s, c, rng)) {
    const double d = (invert(cam).translation() - center).norm();
    EXPECT_GE(d, c.distance_min - 1e-12);
    EXPECT_LE(d, c.distance_max + 1e-12);
  }
}

TEST(SampleCameras, RollStatistics) {
  const MeshLibrary lib = builtin_library();
  SceneConfig c;
  c.eccentric_noise_sigma = 0.0;
  c.roll_noise_sigma = testing::radians(10.0);
  c.camera_count = 10000;
  std::mt19937_64 rng(7);
  const SceneInstance s = place_objects(lib, c, rng);
  const Vec3 center = scene_center(s);
  double sum = 0, sum_sq = 0;
  const auto cams = sample_cameras(s, c, rng);
  for (const RigidTransform& cam : cams) {
    const RigidTransform view = look_at(invert(cam).translation(), center);
    const Mat3 rz = cam.rotation() * view.rotation().transpose();
    const double roll = std::atan2(rz(1, 0), rz(0, 0));
    sum += roll;
    sum_sq += roll * roll;
  }
  const double n = double(cams.size());
  const double sd = std::sqrt(sum_sq / n - (sum / n) * (sum / n));
  EXPECT_NEAR(testing::degrees(sd), 10.0, 0.5);
}

TEST(GenerateScene, DeterministicPerIndex) {
  const MeshLibrary lib = builtin_library();
  const SceneConfig c = small_config();
  const SceneInstance a = generate_scene(lib, c, 3);
  const SceneInstance b = generate_scene(lib, c, 3);
  ASSERT_EQ(a.cameras.size(), b.cameras.size());
  for (std::size_t i = 0; i < a.cameras.size(); ++i) EXPECT_EQ(a.cameras[i], b.cameras[i]);
  const SceneInstance other = generate_scene(lib, c, 4);
  EXPECT_FALSE(other.cameras[0] == a.cameras[0]);
}

TEST(GenerateDataset, ByteIdenticalAndMasksReproduce) {
  const MeshLibrary lib = builtin_library();
  const SceneConfig c = small_config();
  const fs::path a = temp_dir("a"), b = temp_dir("b");
  const DatasetManifest ma = generate_dataset(lib, c, 2, a);
  generate_dataset(lib, c, 2, b);
  EXPECT_EQ(ma.annotation_count, 2u * 4u * 2u);
  std::size_t files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), a);
    EXPECT_EQ(slurp(entry.path()), slurp(b / rel)) << rel;
    ++files;
  }
  EXPECT_GT(files, 20u);

  // Each stored GT pose re-renders the stored full mask.
  for (const std::string& scene : ma.scenes) {
    const nlohmann::json gt = read_json(a / scene / "scene_gt.json");
    for (const auto& [key, anns] : gt.items()) {
      for (std::size_t i = 0; i < anns.size(); ++i) {
        Mat3 r;
        for (int e = 0; e < 9; ++e) r(e / 3, e % 3) = anns[i]["cam_R_m2c"][std::size_t(e)].get<double>();
        const auto& t = anns[i]["cam_t_m2c"];
        const RigidTransform pose(r, Vec3(t[0].get<double>(), t[1].get<double>(), t[2].get<double>()) / 1000.0);
        const int obj = anns[i]["obj_id"].get<int>();
        const TriangleMesh mesh = load_mesh(a / ("models/obj_" + std::string(5, '0') + std::to_string(obj) + ".obj"));
        const Mask rendered = render_mask(mesh, c.intrinsics, pose).mask;
        char name[32];
        std::snprintf(name, sizeof name, "%06d_%06zu.png", std::stoi(key), i);
        const Mask stored = read_mask_png(a / scene / "mask" / name);
        std::size_t inter = 0, uni = 0;
        for (std::size_t p = 0; p < stored.data.size(); ++p) {
          inter += stored.data[p] && rendered.data[p];
          uni += stored.data[p] || rendered.data[p];
        }
        if (uni > 0) {
          EXPECT_GE(double(inter) / double(uni), 0.99) << scene << " " << name;
        }
      }
    }
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(GenerateDataset, VisibleMaskIsSubsetOfFullMask) {
  const MeshLibrary lib = builtin_library();
  const SceneConfig c = small_config();
  const fs::path a = temp_dir("visib");
  generate_dataset(lib, c, 1, a);
  const nlohmann::json info = read_json(a / "scene_000000" / "scene_gt_info.json");
  for (int cam = 0; cam < c.camera_count; ++cam) {
    for (int t = 0; t < c.target_count; ++t) {
      char name[32];
      std::snprintf(name, sizeof name, "%06d_%06d.png", cam, t);
      const Mask full = read_mask_png(a / "scene_000000" / "mask" / name);
      const Mask vis = read_mask_png(a / "scene_000000" / "mask_visib" / name);
      for (std::size_t p = 0; p < vis.data.size(); ++p) {
        if (vis.data[p]) {
          ASSERT_TRUE(full.data[p]);
        }
      }
      const double fract = info[std::to_string(cam)][std::size_t(t)]["visib_fract"].get<double>();
      EXPECT_GE(fract, 0.0);
      EXPECT_LE(fract, 1.0);
    }
  }
  fs::remove_all(a);
}

TEST(PoseStats, KnownAngles) {
  const Vec3 eye(0.1, 1.0, 1.0);
  const RigidTransform cam = look_at(eye, Vec3::Zero());
  const double az_truth = testing::degrees(std::atan2(1.0, 0.1));
  const double el_truth = testing::degrees(std::asin(1.0 / eye.norm()));
  const auto [az, el] = viewing_angles(cam);
  EXPECT_NEAR(az, az_truth, 1e-9);
  EXPECT_NEAR(el, el_truth, 1e-9);
  PoseStats s;
  s.add_pose(cam);
  EXPECT_EQ(s.azimuth.counts[std::size_t(az_truth / 10.0)], 1u);
  EXPECT_EQ(s.elevation.counts[std::size_t((el_truth + 90.0) / 10.0)], 1u);
  EXPECT_EQ(s.distance.counts[std::size_t(eye.norm() / 0.1)], 1u);
}

TEST(PoseStats, IdenticalPosesFillOneBin) {
  SceneInstance scene;
  scene.objects.push_back({0, RigidTransform(Mat3::Identity(), Vec3(0.1, 0, 0)), true, 0.05});
  scene.objects.push_back({0, RigidTransform(), false, 0.05});
  for (int i = 0; i < 25; ++i) scene.cameras.push_back(look_at(Vec3(0.5, 0.5, 0.5), Vec3(0.1, 0, 0)));
  const PoseStats s = pose_stats(std::span(&scene, 1));
  for (const Histogram* h : {&s.azimuth, &s.elevation, &s.distance}) {
    EXPECT_EQ(h->total(), 25u);
    EXPECT_EQ(std::count_if(h->counts.begin(), h->counts.end(), [](std::size_t c) { return c > 0; }), 1);
  }
}

TEST(Histogram, ClampsOutOfRange) {
  Histogram h(0.0, 1.0, 4);
  for (double v : {-1.0, 0.0, 0.3, 0.99, 1.0, 5.0}) h.add(v);
  EXPECT_EQ(h.total(), 6u);
  EXPECT_EQ(h.counts.front(), 2u);
  EXPECT_EQ(h.counts.back(), 3u);
}

TEST(DatasetStats, TotalsEqualAnnotations) {
  const MeshLibrary lib = builtin_library();
  const SceneConfig c = small_config();
  const fs::path a = temp_dir("stats");
  const DatasetManifest m = generate_dataset(lib, c, 2, a);
  const PoseStats s = dataset_stats(a);
  EXPECT_EQ(s.azimuth.total(), m.annotation_count);
  EXPECT_EQ(s.elevation.total(), m.annotation_count);
  EXPECT_EQ(s.visibility.total(), m.annotation_count);
  write_histogram_svg(a / "az.svg", s.azimuth, "azimuth");
  EXPECT_NE(slurp(a / "az.svg").find("<svg"), std::string::npos);
  fs::remove_all(a);
}

}  // namespace
}  // namespace metric_align
