#include "metric_align/evaluate.hpp"

#include "metric_align/error.hpp"
#include "metric_align/io.hpp"
#include "metric_align/parallel.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <tuple>
#include <sstream>

namespace metric_align {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename T>
T parse_cell(const std::string& raw, std::size_t line_no) {
  const std::string s = trim(raw);
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw Error(ErrorCode::kFormatError, "estimates line " + std::to_string(line_no) + ": bad value '" + s + "'");
  }
  return v;
}

RigidTransform pose_from_bop(const json& ann) {
  Mat3 r;
  for (int i = 0; i < 9; ++i) r(i / 3, i % 3) = ann.at("cam_R_m2c").at(std::size_t(i)).get<double>();
  const json& t = ann.at("cam_t_m2c");
  return {r, Vec3(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>()) / 1000.0};
}

CameraIntrinsics intrinsics_from_bop(const json& cam, int width, int height) {
  const json& k = cam.at("cam_K");
  return {k.at(0).get<double>(), k.at(4).get<double>(), k.at(2).get<double>(), k.at(5).get<double>(), width, height};
}

std::string pad6(std::size_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", v);
  return buf;
}

struct ObjectModel {
  TriangleMesh mesh;
  PointCloud points;
  double diameter = 0.0;
};

struct Annotation {
  std::size_t scene_index;
  std::string scene_name;
  int image;
  int obj;
  RigidTransform gt;
  double visib;
};

}  // namespace

std::vector<Estimate> read_estimates_csv(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw Error(ErrorCode::kIoFailure, "not a file: " + path.string());
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::kIoFailure, "cannot read " + path.string());
  std::vector<Estimate> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split(line);
    if (line_no == 1 && !cells.empty() && trim(cells[0]) == "scene") continue;
    if (cells.size() != 15) {
      throw Error(ErrorCode::kFormatError,
                  "estimates line " + std::to_string(line_no) + ": expected 15 columns, got " + std::to_string(cells.size()));
    }
    Estimate e;
    e.scene = parse_cell<int>(cells[0], line_no);
    e.image = parse_cell<int>(cells[1], line_no);
    e.obj = parse_cell<int>(cells[2], line_no);
    Mat3 r;
    for (int i = 0; i < 9; ++i) r(i / 3, i % 3) = parse_cell<double>(cells[std::size_t(3 + i)], line_no);
    Vec3 t;
    for (int i = 0; i < 3; ++i) t[i] = parse_cell<double>(cells[std::size_t(12 + i)], line_no);
    if (!r.allFinite() || !t.allFinite()) {
      throw Error(ErrorCode::kFormatError, "estimates line " + std::to_string(line_no) + ": non-finite pose");
    }
    e.pose = RigidTransform(r, t);
    out.push_back(e);
  }
  return out;
}

void write_estimates_csv(const fs::path& path, std::span<const Estimate> estimates) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::kIoFailure, "cannot write " + path.string());
  f.precision(17);
  f << "scene,image,obj,r11,r12,r13,r21,r22,r23,r31,r32,r33,tx,ty,tz\n";
  for (const Estimate& e : estimates) {
    f << e.scene << ',' << e.image << ',' << e.obj;
    for (int i = 0; i < 9; ++i) f << ',' << e.pose.rotation()(i / 3, i % 3);
    for (int i = 0; i < 3; ++i) f << ',' << e.pose.translation()[i];
    f << '\n';
  }
}

namespace {

std::vector<Annotation> load_annotations(const fs::path& dataset_dir, const json& manifest) {
  std::vector<Annotation> out;
  for (const json& s : manifest.at("scenes")) {
    const std::string name = s.at("name").get<std::string>();
    const auto index = s.at("scene_index").get<std::size_t>();
    const json gt = read_json(dataset_dir / name / "scene_gt.json");
    const json info = read_json(dataset_dir / name / "scene_gt_info.json");
    std::vector<std::pair<int, std::string>> images;
    for (const auto& [key, anns] : gt.items()) images.emplace_back(std::stoi(key), key);
    std::sort(images.begin(), images.end());
    for (const auto& [image, key] : images) {
      const json& anns = gt.at(key);
      const json& infos = info.at(key);
      for (std::size_t a = 0; a < anns.size(); ++a) {
        out.push_back({index, name, image, anns[a].at("obj_id").get<int>(), pose_from_bop(anns[a]),
                       infos.at(a).at("visib_fract").get<double>()});
      }
    }
  }
  return out;
}

}  // namespace

std::vector<Estimate> ground_truth_estimates(const fs::path& dataset_dir) {
  try {
    const json manifest = read_json(dataset_dir / "dataset.json");
    std::vector<Estimate> out;
    for (const Annotation& a : load_annotations(dataset_dir, manifest)) {
      out.push_back({int(a.scene_index), a.image, a.obj, a.gt});
    }
    return out;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("malformed dataset: ") + e.what());
  }
}

EvalResult evaluate_dataset(const fs::path& dataset_dir, std::span<const Estimate> estimates, const EvalConfig& cfg) {
  json manifest;
  std::vector<Annotation> annotations;
  std::map<int, ObjectModel> models;
  try {
    manifest = read_json(dataset_dir / "dataset.json");
    annotations = load_annotations(dataset_dir, manifest);
    for (const json& o : manifest.at("objects")) {
      ObjectModel m;
      m.mesh = load_mesh(dataset_dir / o.at("model").get<std::string>());
      m.points = model_points(m.mesh);
      m.diameter = diameter(m.mesh);
      models.emplace(o.at("obj_id").get<int>(), std::move(m));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("malformed dataset: ") + e.what());
  }

  // Each estimate is consumed by at most one annotation.
  std::map<std::tuple<int, int, int>, std::vector<std::size_t>> lookup;
  for (std::size_t e = 0; e < estimates.size(); ++e) {
    lookup[{estimates[e].scene, estimates[e].image, estimates[e].obj}].push_back(e);
  }

  std::vector<std::size_t> selected;
  std::vector<const Estimate*> matched;
  std::map<std::tuple<int, int, int>, std::size_t> used;
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    if (annotations[i].visib < cfg.min_visibility) continue;
    const Annotation& a = annotations[i];
    const std::tuple<int, int, int> key{int(a.scene_index), a.image, a.obj};
    const Estimate* est = nullptr;
    auto it = lookup.find(key);
    if (it != lookup.end() && used[key] < it->second.size()) est = &estimates[it->second[used[key]++]];
    selected.push_back(i);
    matched.push_back(est);
  }

  const std::vector<double> fractions = bop_fractions();
  std::vector<AnnotationErrors> errors(selected.size());
  std::vector<std::optional<ReportRow>> rows(selected.size());
  std::map<std::string, json> cameras;
  for (const Annotation& a : annotations) {
    if (!cameras.count(a.scene_name)) cameras[a.scene_name] = read_json(dataset_dir / a.scene_name / "scene_camera.json");
  }


  parallel_for(selected.size(), [&](std::size_t s) {
    const Annotation& a = annotations[selected[s]];
    const auto model_it = models.find(a.obj);
    if (model_it == models.end()) {
      throw Error(ErrorCode::kFormatError, "annotation references unknown obj_id " + std::to_string(a.obj));
    }
    const ObjectModel& model = model_it->second;
    AnnotationErrors& err = errors[s];
    err.diameter = model.diameter;
    const Estimate* est = matched[s];
    if (!est) {
      err.vsd.assign(fractions.size(), 1.0);
      err.mssd = std::numeric_limits<double>::infinity();
      err.mspd = std::numeric_limits<double>::infinity();
      return;
    }
    const DepthMap depth = read_depth_png(dataset_dir / a.scene_name / "depth" / (pad6(std::size_t(a.image)) + ".png"));
    CameraIntrinsics k;
    try {
      k = intrinsics_from_bop(cameras.at(a.scene_name).at(std::to_string(a.image)), depth.width, depth.height);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kFormatError, std::string("malformed scene_camera.json: ") + e.what());
    }
    std::vector<double> taus;
    for (double f : fractions) taus.push_back(f * model.diameter);
    const SymmetrySet sym = SymmetrySet::identity_only();
    err.vsd = vsd(model.mesh, k, a.gt, est->pose, depth, taus);
    err.mssd = mssd(model.mesh, sym, a.gt, est->pose);
    err.mspd = mspd(model.mesh, sym, k, a.gt, est->pose);

    const RecallSummary single = bop_average_recall(std::span(&err, 1), k.width);
    ReportRow row;
    row.scene = a.scene_name;
    row.image = std::to_string(a.image);
    row.obj = std::to_string(a.obj);
    row.metrics.add = add(model.points, a.gt, est->pose);
    row.metrics.adds = adds(model.points, a.gt, est->pose);
    row.metrics.vsd_recall = single.vsd_recall;
    row.metrics.mssd_recall = single.mssd_recall;
    row.metrics.mspd_recall = single.mspd_recall;
    row.metrics.ar = single.ar;
    PointCloud pg, pe;
    for (const Vec3& p : model.points.points) {
      pg.points.push_back(a.gt * p);
      pe.points.push_back(est->pose * p);
    }
    row.metrics.chamfer = chamfer(pe, pg);
    rows[s] = row;
  });

  EvalResult out;
  for (std::size_t s = 0; s < selected.size(); ++s) {
    if (rows[s]) {
      out.rows.push_back(*rows[s]);
    } else {
      ++out.missing;
    }
  }
  int width = 640;
  if (manifest.contains("config") && manifest["config"].contains("intrinsics")) {
    width = manifest["config"]["intrinsics"].value("width", 640);
  }
  out.recall = bop_average_recall(errors, width);
  return out;
}

}  // namespace metric_align
