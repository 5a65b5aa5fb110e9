#include "metric_align/scenegen.hpp"

#include "metric_align/error.hpp"
#include "metric_align/io.hpp"
#include "metric_align/parallel.hpp"
#include "metric_align/raster.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace metric_align {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kMaxRejections = 10000;

json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

Vec3 vec_from_json(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

std::string zero_pad(std::size_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu", v);
  return buf;
}

Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Vector4d q;
  do {
    q = Eigen::Vector4d(n(rng), n(rng), n(rng), n(rng));
  } while (q.norm() < 1e-9);
  q.normalize();
  return Eigen::Quaterniond(q(0), q(1), q(2), q(3)).toRotationMatrix();
}

}  // namespace

void SceneConfig::validate() const {
  if (target_count < 1 || occluder_count < 0 || camera_count < 1) {
    throw Error(ErrorCode::kInvalidArgument, "scene counts must be positive");
  }
  if (!((bounds_max - bounds_min).minCoeff() >= 0.0) || !((bounds_max - bounds_min).head<2>().minCoeff() > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "placement bounds are degenerate");
  }
  if (!(distance_min > 0.0) || distance_max < distance_min) {
    throw Error(ErrorCode::kInvalidArgument, "distance range must satisfy 0 < min <= max");
  }
  if (eccentric_noise_sigma < 0.0 || roll_noise_sigma < 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "noise sigmas must be >= 0");
  }
  intrinsics.validate();
}

json to_json(const SceneConfig& c) {
  return {{"target_count", c.target_count},
          {"occluder_count", c.occluder_count},
          {"camera_count", c.camera_count},
          {"bounds_min", vec_json(c.bounds_min)},
          {"bounds_max", vec_json(c.bounds_max)},
          {"eccentric_noise_sigma", c.eccentric_noise_sigma},
          {"roll_noise_sigma_deg", c.roll_noise_sigma * 180.0 / M_PI},
          {"distance_range", {c.distance_min, c.distance_max}},
          {"drop_to_plane", c.drop_to_plane},
          {"ground_plane", c.ground_plane},
          {"intrinsics", to_json(c.intrinsics)},
          {"rng_seed", c.rng_seed}};
}

SceneConfig scene_config_from_json(const json& j) {
  SceneConfig c;
  try {
    c.target_count = j.value("target_count", c.target_count);
    c.occluder_count = j.value("occluder_count", c.occluder_count);
    c.camera_count = j.value("camera_count", c.camera_count);
    if (j.contains("bounds_min")) c.bounds_min = vec_from_json(j["bounds_min"]);
    if (j.contains("bounds_max")) c.bounds_max = vec_from_json(j["bounds_max"]);
    c.eccentric_noise_sigma = j.value("eccentric_noise_sigma", c.eccentric_noise_sigma);
    if (j.contains("roll_noise_sigma_deg")) c.roll_noise_sigma = j["roll_noise_sigma_deg"].get<double>() * M_PI / 180.0;
    if (j.contains("distance_range")) {
      c.distance_min = j["distance_range"].at(0).get<double>();
      c.distance_max = j["distance_range"].at(1).get<double>();
    }
    c.drop_to_plane = j.value("drop_to_plane", c.drop_to_plane);
    c.ground_plane = j.value("ground_plane", c.ground_plane);
    if (j.contains("intrinsics")) c.intrinsics = intrinsics_from_json(j["intrinsics"]);
    c.rng_seed = j.value("rng_seed", c.rng_seed);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("bad scene config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<TriangleMesh> builtin_occluders() {
  std::vector<TriangleMesh> m;
  m.push_back(make_box(0.10, 0.10, 0.10));
  m.push_back(make_box(0.16, 0.06, 0.04));
  m.push_back(make_box(0.04, 0.04, 0.14));
  m.push_back(make_box(0.12, 0.09, 0.02));
  m.push_back(make_cylinder(0.04, 0.12, 24));
  m.push_back(make_cylinder(0.06, 0.03, 24));
  m.push_back(make_cylinder(0.02, 0.16, 16));
  m.push_back(make_icosphere(0.05, 2));
  m.push_back(make_uv_sphere(0.035, 16, 8));
  m.push_back(make_icosphere(0.07, 2));
  return m;
}

std::vector<TriangleMesh> builtin_targets() {
  std::vector<TriangleMesh> m;
  const double radii[4] = {0.06, 0.07, 0.08, 0.09};
  for (int i = 0; i < 4; ++i) m.push_back(make_blob(std::uint64_t(101 + i), radii[i], 3));
  return m;
}

SceneInstance place_objects(const MeshLibrary& lib, const SceneConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  if (lib.targets.empty()) throw Error(ErrorCode::kInvalidArgument, "no target meshes");
  if (cfg.occluder_count > 0 && lib.occluders.empty()) throw Error(ErrorCode::kInvalidArgument, "no occluder meshes");

  struct Pending {
    const TriangleMesh* mesh;
    std::size_t id;
    bool target;
  };
  std::vector<Pending> todo;
  for (int i = 0; i < cfg.target_count; ++i) {
    const std::size_t id = std::size_t(i) % lib.targets.size();
    todo.push_back({&lib.targets[id], id, true});
  }
  for (int i = 0; i < cfg.occluder_count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(0, lib.occluders.size() - 1);
    const std::size_t id = pick(rng);
    todo.push_back({&lib.occluders[id], id, false});
  }

  std::uniform_real_distribution<double> ux(cfg.bounds_min.x(), cfg.bounds_max.x());
  std::uniform_real_distribution<double> uy(cfg.bounds_min.y(), cfg.bounds_max.y());
  std::uniform_real_distribution<double> uz(cfg.bounds_min.z(), cfg.bounds_max.z());
  SceneInstance scene;
  int rejections = 0;
  for (const Pending& p : todo) {
    const double radius = bounding_radius(*p.mesh);
    while (true) {
      const Mat3 r = random_rotation(rng);
      Vec3 c(ux(rng), uy(rng), uz(rng));
      if (cfg.drop_to_plane) {
        double lowest = std::numeric_limits<double>::infinity();
        for (const Vec3& v : p.mesh->vertices) lowest = std::min(lowest, (r * v).z());
        c.z() = cfg.bounds_min.z() - lowest;
      }
      bool ok = true;
      for (const PlacedObject& o : scene.objects) {
        const double allowed = o.radius + radius - 0.1 * std::min(o.radius, radius);
        if ((o.world_from_object.translation() - c).norm() < allowed) {
          ok = false;
          break;
        }
      }
      if (ok) {
        scene.objects.push_back({p.id, RigidTransform(r, c), p.target, radius});
        break;
      }
      if (++rejections >= kMaxRejections) {
        throw Error(ErrorCode::kPlacementFailed, "object placement failed after " + std::to_string(kMaxRejections) +
                                                     " rejections");
      }
    }
  }
  return scene;
}

Vec3 scene_center(const SceneInstance& scene) {
  if (scene.objects.empty()) throw Error(ErrorCode::kInvalidArgument, "scene has no objects");
  Vec3 c = Vec3::Zero();
  for (const PlacedObject& o : scene.objects) c += o.world_from_object.translation();
  return c / double(scene.objects.size());
}

std::vector<RigidTransform> sample_cameras(const SceneInstance& scene, const SceneConfig& cfg, std::mt19937_64& rng) {
  const Vec3 center = scene_center(scene);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> dist(cfg.distance_min, cfg.distance_max);
  std::normal_distribution<double> gauss(0.0, 1.0);
  // Keep cameras at least ~6 degrees above the ground plane when it is rendered.
  const double z_min = cfg.ground_plane ? 0.1 : -1.0;
  std::vector<RigidTransform> cams;
  cams.reserve(std::size_t(cfg.camera_count));
  for (int i = 0; i < cfg.camera_count; ++i) {
    const double z = z_min + (1.0 - z_min) * unit(rng);
    const double phi = 2.0 * M_PI * unit(rng);
    const double rxy = std::sqrt(std::max(0.0, 1.0 - z * z));
    const Vec3 dir(rxy * std::cos(phi), rxy * std::sin(phi), z);
    const Vec3 eye = center + dist(rng) * dir;
    const double ex = gauss(rng), ey = gauss(rng), ez = gauss(rng);
    const Vec3 target = center + cfg.eccentric_noise_sigma * Vec3(ex, ey, ez);
    const RigidTransform view = look_at(eye, target);
    const double roll = cfg.roll_noise_sigma * gauss(rng);
    const Mat3 rz = Eigen::AngleAxisd(roll, Vec3::UnitZ()).toRotationMatrix();
    cams.emplace_back(rz * view.rotation(), rz * view.translation());
  }
  return cams;
}

SceneInstance generate_scene(const MeshLibrary& lib, const SceneConfig& cfg, std::size_t scene_index) {
  const auto idx = std::uint64_t(scene_index);
  std::seed_seq seq{std::uint32_t(cfg.rng_seed), std::uint32_t(cfg.rng_seed >> 32), std::uint32_t(idx),
                    std::uint32_t(idx >> 32)};
  std::mt19937_64 rng(seq);
  SceneInstance scene = place_objects(lib, cfg, rng);
  scene.scene_id = scene_index;
  scene.cameras = sample_cameras(scene, cfg, rng);
  return scene;
}

namespace {

json pose_json_mm(const RigidTransform& t) {
  json r = json::array();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) r.push_back(t.rotation()(i, j));
  }
  const Vec3 tm = t.translation() * 1000.0;
  return {{"R", r}, {"t", {tm.x(), tm.y(), tm.z()}}};
}

void write_scene(const MeshLibrary& lib, const SceneConfig& cfg, const SceneInstance& scene, const fs::path& dir,
                 const TriangleMesh& ground) {
  fs::create_directories(dir / "depth");
  fs::create_directories(dir / "mask");
  fs::create_directories(dir / "mask_visib");
  std::vector<SceneItem> items;
  std::vector<std::size_t> target_items;
  for (const PlacedObject& o : scene.objects) {
    const TriangleMesh* m = o.is_target ? &lib.targets[o.mesh_id] : &lib.occluders[o.mesh_id];
    if (o.is_target) target_items.push_back(items.size());
    items.push_back({m, o.world_from_object, 1.0});
  }
  if (cfg.ground_plane) {
    items.push_back({&ground, RigidTransform(Mat3::Identity(), Vec3(0.0, 0.0, cfg.bounds_min.z())), 1.0});
  }
  const CameraIntrinsics& k = cfg.intrinsics;
  json scene_gt = json::object(), scene_camera = json::object(), scene_info = json::object();
  json cam_k = json::array();
  const Mat3 km = k.matrix();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) cam_k.push_back(km(i, j));
  }
  for (std::size_t c = 0; c < scene.cameras.size(); ++c) {
    const RigidTransform& cam = scene.cameras[c];
    const std::string key = std::to_string(c);
    const SceneRender render = render_scene(items, k, cam);
    write_depth_png(dir / "depth" / (zero_pad(c) + ".png"), render.depth);

    const json w2c = pose_json_mm(cam);
    scene_camera[key] = {{"cam_K", cam_k}, {"depth_scale", 0.1}, {"cam_R_w2c", w2c["R"]}, {"cam_t_w2c", w2c["t"]}};
    json gts = json::array(), infos = json::array();
    const RigidTransform world_from_camera = invert(cam);
    for (std::size_t a = 0; a < target_items.size(); ++a) {
      const std::size_t item = target_items[a];
      const PlacedObject& obj = scene.objects[item];
      const RigidTransform m2c = chain_object_pose(world_from_camera, obj.world_from_object);
      const MaskRender full = render_mask(*items[item].mesh, k, m2c);
      write_mask_png(dir / "mask" / (zero_pad(c) + "_" + zero_pad(a) + ".png"), full.mask);
      const std::size_t all = count_nonzero(full.mask);
      Mask visib(k.width, k.height);
      for (std::size_t i = 0; i < visib.data.size(); ++i) visib.data[i] = render.labels.data[i] == int(item) ? 1 : 0;
      write_mask_png(dir / "mask_visib" / (zero_pad(c) + "_" + zero_pad(a) + ".png"), visib);
      const std::size_t visible = count_nonzero(visib);
      const json pose = pose_json_mm(m2c);
      gts.push_back({{"obj_id", obj.mesh_id + 1}, {"cam_R_m2c", pose["R"]}, {"cam_t_m2c", pose["t"]}});
      infos.push_back({{"px_count_all", all},
                       {"px_count_visib", visible},
                       {"visib_fract", all ? std::min(1.0, double(visible) / double(all)) : 0.0}});
    }
    scene_gt[key] = gts;
    scene_info[key] = infos;
  }
  write_json(dir / "scene_gt.json", scene_gt);
  write_json(dir / "scene_camera.json", scene_camera);
  write_json(dir / "scene_gt_info.json", scene_info);
}

}  // namespace

DatasetManifest generate_dataset(const MeshLibrary& lib, const SceneConfig& cfg, std::size_t scene_count,
                                 const fs::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "models", ec);
  if (ec) throw Error(ErrorCode::kIoFailure, "cannot create " + out_dir.string() + ": " + ec.message());
  json objects = json::array();
  for (std::size_t i = 0; i < lib.targets.size(); ++i) {
    const std::string name = "obj_" + zero_pad(i + 1) + ".obj";
    write_obj(lib.targets[i], out_dir / "models" / name);
    objects.push_back({{"obj_id", i + 1}, {"model", "models/" + name}});
  }
  // Large enough to fill grazing views, small enough to stay in 16-bit depth range.
  const TriangleMesh ground = make_plane(4.0, 4.0);

  DatasetManifest manifest;
  manifest.root = out_dir;
  manifest.scenes.resize(scene_count);
  std::vector<std::size_t> counts(scene_count, 0);
  parallel_for(scene_count, [&](std::size_t s) {
    const SceneInstance scene = generate_scene(lib, cfg, s);
    manifest.scenes[s] = "scene_" + zero_pad(s);
    write_scene(lib, cfg, scene, out_dir / manifest.scenes[s], ground);
    counts[s] = scene.cameras.size() * std::size_t(cfg.target_count);
  });
  for (std::size_t c : counts) manifest.annotation_count += c;

  json scenes = json::array();
  for (std::size_t s = 0; s < scene_count; ++s) {
    scenes.push_back({{"name", manifest.scenes[s]}, {"scene_index", s}});
  }
  write_json(out_dir / "dataset.json", {{"master_seed", cfg.rng_seed},
                                        {"scene_count", scene_count},
                                        {"scenes", scenes},
                                        {"objects", objects},
                                        {"annotation_count", manifest.annotation_count},
                                        {"config", to_json(cfg)}});
  return manifest;
}

void Histogram::add(double v) {
  if (counts.empty()) return;
  const double t = (v - lo) / (hi - lo) * double(counts.size());
  const auto bin = std::size_t(std::clamp(std::floor(t), 0.0, double(counts.size() - 1)));
  ++counts[bin];
}

std::size_t Histogram::total() const {
  std::size_t s = 0;
  for (std::size_t c : counts) s += c;
  return s;
}

std::pair<double, double> viewing_angles(const RigidTransform& camera_from_object) {
  const Vec3 eye = -(camera_from_object.rotation().transpose() * camera_from_object.translation());
  const double n = eye.norm();
  if (!(n > 0.0)) return {0.0, 0.0};
  double az = std::atan2(eye.y(), eye.x()) * 180.0 / M_PI;
  if (az < 0.0) az += 360.0;
  if (az >= 360.0) az -= 360.0;
  const double el = std::asin(std::clamp(eye.z() / n, -1.0, 1.0)) * 180.0 / M_PI;
  return {az, el};
}

void PoseStats::add_pose(const RigidTransform& camera_from_object) {
  const auto [az, el] = viewing_angles(camera_from_object);
  azimuth.add(az);
  elevation.add(el);
  distance.add(camera_from_object.translation().z());
}

PoseStats pose_stats(std::span<const SceneInstance> scenes) {
  PoseStats stats;
  for (const SceneInstance& s : scenes) {
    for (const RigidTransform& cam : s.cameras) {
      const RigidTransform world_from_camera = invert(cam);
      for (const PlacedObject& o : s.objects) {
        if (o.is_target) stats.add_pose(chain_object_pose(world_from_camera, o.world_from_object));
      }
    }
  }
  return stats;
}

PoseStats dataset_stats(const fs::path& dataset_dir) {
  const json manifest = read_json(dataset_dir / "dataset.json");
  PoseStats stats;
  try {
    for (const json& s : manifest.at("scenes")) {
      const fs::path dir = dataset_dir / s.at("name").get<std::string>();
      const json gt = read_json(dir / "scene_gt.json");
      const json info = read_json(dir / "scene_gt_info.json");
      for (const auto& [key, annotations] : gt.items()) {
        const json& infos = info.at(key);
        for (std::size_t a = 0; a < annotations.size(); ++a) {
          const json& ann = annotations[a];
          Mat3 r;
          for (int i = 0; i < 9; ++i) r(i / 3, i % 3) = ann.at("cam_R_m2c").at(std::size_t(i)).get<double>();
          const Vec3 t = vec_from_json(ann.at("cam_t_m2c")) / 1000.0;
          stats.add_pose(RigidTransform(r, t));
          stats.visibility.add(infos.at(a).at("visib_fract").get<double>());
        }
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("malformed dataset: ") + e.what());
  }
  return stats;
}

json to_json(const PoseStats& stats) {
  auto h = [](const Histogram& x) {
    return json{{"lo", x.lo}, {"hi", x.hi}, {"counts", x.counts}, {"total", x.total()}};
  };
  return {{"azimuth_deg", h(stats.azimuth)},
          {"elevation_deg", h(stats.elevation)},
          {"distance_m", h(stats.distance)},
          {"visibility", h(stats.visibility)}};
}

void write_histogram_svg(const fs::path& path, const Histogram& h, const std::string& title) {
  const double width = 640.0, height = 320.0, margin = 40.0;
  const std::size_t peak = h.counts.empty() ? 0 : *std::max_element(h.counts.begin(), h.counts.end());
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
      << title << "</text>\n";
  const double plot_w = width - 2 * margin, plot_h = height - 2 * margin;
  const double bar_w = h.counts.empty() ? 0.0 : plot_w / double(h.counts.size());
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    const double bh = peak ? plot_h * double(h.counts[i]) / double(peak) : 0.0;
    svg << "<rect x=\"" << margin + bar_w * double(i) << "\" y=\"" << margin + plot_h - bh << "\" width=\""
        << std::max(bar_w - 1.0, 0.5) << "\" height=\"" << bh << "\" fill=\"#4472c4\"/>\n";
  }
  svg << "<line x1=\"" << margin << "\" y1=\"" << margin + plot_h << "\" x2=\"" << margin + plot_w << "\" y2=\""
      << margin + plot_h << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << margin << "\" y=\"" << height - 12 << "\" font-family=\"sans-serif\" font-size=\"11\">" << h.lo
      << "</text>\n";
  svg << "<text x=\"" << margin + plot_w << "\" y=\"" << height - 12
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << h.hi << "</text>\n";
  svg << "<text x=\"" << margin - 4 << "\" y=\"" << margin + 4
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << peak << "</text>\n";
  svg << "</svg>\n";
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::kIoFailure, "cannot write " + path.string());
  f << svg.str();
}

}  // namespace metric_align
