#include "metric_align/error.hpp"
#include "metric_align/evaluate.hpp"
#include "metric_align/geom.hpp"
#include "metric_align/mesh.hpp"
#include "metric_align/metrics.hpp"
#include "metric_align/raster.hpp"
#include "metric_align/scenegen.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <tuple>

namespace py = pybind11;
using namespace metric_align;

namespace {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Grid = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using BoolGrid = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<Vec3> to_vec(const Points& p) {
  std::vector<Vec3> out(std::size_t(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) out[std::size_t(i)] = p.row(i).transpose();
  return out;
}

Points to_points(std::span<const Vec3> v) {
  Points p(Eigen::Index(v.size()), 3);
  for (std::size_t i = 0; i < v.size(); ++i) p.row(Eigen::Index(i)) = v[i].transpose();
  return p;
}

TriangleMesh to_mesh(const Points& v, const Faces& f) {
  TriangleMesh m;
  m.vertices = to_vec(v);
  for (Eigen::Index i = 0; i < f.rows(); ++i) m.faces.push_back({f(i, 0), f(i, 1), f(i, 2)});
  return m;
}

std::tuple<Points, Faces> from_mesh(const TriangleMesh& m) {
  Faces f(Eigen::Index(m.faces.size()), 3);
  for (std::size_t i = 0; i < m.faces.size(); ++i) {
    for (int j = 0; j < 3; ++j) f(Eigen::Index(i), j) = m.faces[i][std::size_t(j)];
  }
  return {to_points(m.vertices), f};
}

PointCloud cloud(const Points& p) { return {to_vec(p), Frame::kCamera}; }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Metric-scale alignment core (poses as 4x4 arrays, points as (n, 3) arrays)";
  static py::exception<Error> error(m, "Error");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, e.what());
    }
  });

  m.def(
      "estimate_scale",
      [](const Points& model, const Points& observed) { return estimate_scale(cloud(model), cloud(observed)); },
      py::arg("model_points"), py::arg("observed_points"),
      "Least-squares scale alpha minimizing |alpha * model - observed|^2.");
  m.def(
      "relative_pose",
      [](const Mat4& anchor, const Mat4& query) {
        return relative_pose(RigidTransform::from_matrix(anchor), RigidTransform::from_matrix(query)).matrix();
      },
      py::arg("anchor"), py::arg("query"), "inv(anchor) @ query");
  m.def(
      "add",
      [](const Points& pts, const Mat4& gt, const Mat4& est) {
        return add(cloud(pts), RigidTransform::from_matrix(gt), RigidTransform::from_matrix(est));
      },
      py::arg("points"), py::arg("gt"), py::arg("est"));
  m.def(
      "adds",
      [](const Points& pts, const Mat4& gt, const Mat4& est) {
        return adds(cloud(pts), RigidTransform::from_matrix(gt), RigidTransform::from_matrix(est));
      },
      py::arg("points"), py::arg("gt"), py::arg("est"));
  m.def(
      "chamfer", [](const Points& a, const Points& b) { return chamfer(cloud(a), cloud(b)); }, py::arg("a"),
      py::arg("b"));

  m.def(
      "load_mesh", [](const std::filesystem::path& path) { return from_mesh(load_mesh(path)); }, py::arg("path"),
      "Returns (vertices, faces).");
  m.def(
      "normalize_mesh", [](const Points& v, const Faces& f) { return from_mesh(normalize_mesh(to_mesh(v, f))); },
      py::arg("vertices"), py::arg("faces"));
  m.def(
      "rasterize",
      [](const Points& v, const Faces& f, std::tuple<double, double, double, double, int, int> k, const Mat4& pose,
         double scale) {
        const auto [fx, fy, cx, cy, w, h] = k;
        const RenderResult r =
            rasterize(to_mesh(v, f), CameraIntrinsics{fx, fy, cx, cy, w, h}, RigidTransform::from_matrix(pose), scale);
        Grid depth(h, w);
        BoolGrid mask(h, w);
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            depth(y, x) = r.depth.at(x, y);
            mask(y, x) = r.mask.at(x, y) != 0;
          }
        }
        return std::make_tuple(depth, mask);
      },
      py::arg("vertices"), py::arg("faces"), py::arg("intrinsics"), py::arg("pose"), py::arg("scale") = 1.0,
      "intrinsics = (fx, fy, cx, cy, width, height); returns (depth, mask).");

  m.def(
      "generate_dataset",
      [](const std::filesystem::path& out, std::size_t scenes, std::uint64_t seed, int targets, int occluders,
         int cameras) {
        SceneConfig cfg;
        cfg.rng_seed = seed;
        cfg.target_count = targets;
        cfg.occluder_count = occluders;
        cfg.camera_count = cameras;
        const MeshLibrary lib{builtin_targets(), builtin_occluders()};
        py::gil_scoped_release release;
        return generate_dataset(lib, cfg, scenes, out).annotation_count;
      },
      py::arg("out_dir"), py::arg("scenes") = 20, py::arg("seed") = 0, py::arg("targets") = 4,
      py::arg("occluders") = 10, py::arg("cameras") = 100, "Returns the annotation count.");
  m.def(
      "evaluate",
      [](const std::filesystem::path& dataset, const std::optional<std::filesystem::path>& estimates_csv,
         double min_visibility) {
        EvalResult r;
        {
          py::gil_scoped_release release;
          const auto est = estimates_csv ? read_estimates_csv(*estimates_csv) : ground_truth_estimates(dataset);
          r = evaluate_dataset(dataset, est, EvalConfig{min_visibility});
        }
        py::dict d;
        d["evaluated"] = r.rows.size() + r.missing;
        d["missing"] = r.missing;
        d["vsd_recall"] = r.recall.vsd_recall;
        d["mssd_recall"] = r.recall.mssd_recall;
        d["mspd_recall"] = r.recall.mspd_recall;
        d["ar"] = r.recall.ar;
        return d;
      },
      py::arg("dataset"), py::arg("estimates_csv") = py::none(), py::arg("min_visibility") = 0.1,
      "BOP-style recalls; without an estimates CSV the ground truth is scored against itself.");
}
