#pragma once

#include "metric_align/geom.hpp"
#include "metric_align/mesh.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace metric_align {

struct SceneConfig {
  int target_count = 4;
  int occluder_count = 10;
  int camera_count = 100;
  Vec3 bounds_min{-0.4, -0.4, 0.0};
  Vec3 bounds_max{0.4, 0.4, 0.3};
  double eccentric_noise_sigma = 0.05;
  double roll_noise_sigma = 15.0 * M_PI / 180.0;
  double distance_min = 0.5;
  double distance_max = 1.5;
  /// Rest each object on the plane z = bounds_min.z at its lowest vertex.
  bool drop_to_plane = true;
  /// Render a ground plane at z = bounds_min.z; cameras then stay above it.
  bool ground_plane = true;
  CameraIntrinsics intrinsics{572.0, 572.0, 320.0, 240.0, 640, 480};
  std::uint64_t rng_seed = 0;

  void validate() const;
};

nlohmann::json to_json(const SceneConfig& cfg);
/// Missing keys keep their defaults.
SceneConfig scene_config_from_json(const nlohmann::json& j);

/// Targets are annotated; occluders only populate the scene.
struct MeshLibrary {
  std::vector<TriangleMesh> targets;
  std::vector<TriangleMesh> occluders;
};

/// Ten primitive occluders (boxes, cylinders, spheres at varied aspect).
std::vector<TriangleMesh> builtin_occluders();
/// Four smooth asymmetric targets of radius 5 to 9 cm.
std::vector<TriangleMesh> builtin_targets();

struct PlacedObject {
  /// Index into targets (is_target) or occluders.
  std::size_t mesh_id = 0;
  RigidTransform world_from_object;
  bool is_target = false;
  /// Bounding-sphere radius at this placement.
  double radius = 0.0;
};

struct SceneInstance {
  std::size_t scene_id = 0;
  std::vector<PlacedObject> objects;
  /// Camera-from-world.
  std::vector<RigidTransform> cameras;
};

/// Uniform positions in the bounds and uniform orientations, rejecting
/// bounding-sphere overlaps beyond 10% of the smaller radius. Throws
/// kPlacementFailed after 10000 rejections.
SceneInstance place_objects(const MeshLibrary& lib, const SceneConfig& cfg, std::mt19937_64& rng);

/// Mean of the object positions.
Vec3 scene_center(const SceneInstance& scene);

/// Look-at cameras on a spherical shell around the scene center with
/// eccentric target noise and a Gaussian roll about the optical axis.
std::vector<RigidTransform> sample_cameras(const SceneInstance& scene, const SceneConfig& cfg, std::mt19937_64& rng);

/// Per-scene generator seeded from (master seed, scene index); no I/O.
SceneInstance generate_scene(const MeshLibrary& lib, const SceneConfig& cfg, std::size_t scene_index);

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> scenes;
  std::size_t annotation_count = 0;
};

/// BOP-style dataset: per scene depth/, mask/, scene_gt.json,
/// scene_camera.json, scene_gt_info.json; models/ and dataset.json at the root.
DatasetManifest generate_dataset(const MeshLibrary& lib, const SceneConfig& cfg, std::size_t scene_count,
                                 const std::filesystem::path& out_dir);

struct Histogram {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<std::size_t> counts;

  Histogram() = default;
  Histogram(double lo_, double hi_, std::size_t bins) : lo(lo_), hi(hi_), counts(bins, 0) {}
  /// Values outside [lo, hi) land in the first or last bin.
  void add(double v);
  std::size_t total() const;
};

struct PoseStats {
  Histogram azimuth{0.0, 360.0, 36};
  Histogram elevation{-90.0, 90.0, 18};
  Histogram distance{0.0, 2.0, 20};
  Histogram visibility{0.0, 1.0, 20};

  /// Adds one camera-from-object pose.
  void add_pose(const RigidTransform& camera_from_object);
};

/// Azimuth and elevation of the camera direction in the object frame, degrees.
std::pair<double, double> viewing_angles(const RigidTransform& camera_from_object);

/// Object-centric statistics of every target annotation in the scenes.
PoseStats pose_stats(std::span<const SceneInstance> scenes);
/// Statistics of a generated dataset on disk (visibility from scene_gt_info.json).
PoseStats dataset_stats(const std::filesystem::path& dataset_dir);

nlohmann::json to_json(const PoseStats& stats);
void write_histogram_svg(const std::filesystem::path& path, const Histogram& h, const std::string& title);

}  // namespace metric_align
