#include "metric_align/metrics.hpp"

#include "metric_align/detail/kdtree.hpp"
#include "metric_align/error.hpp"
#include "metric_align/raster.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>

namespace metric_align {
namespace {

void require_points(std::span<const Vec3> pts) {
  if (pts.empty()) throw Error(ErrorCode::kEmptyModel, "model has no points");
}

std::vector<Vec3> transformed(std::span<const Vec3> pts, const RigidTransform& t) {
  std::vector<Vec3> out(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) out[i] = t * pts[i];
  return out;
}

double mean_nearest(std::span<const Vec3> from, const detail::KdTree3& to) {
  double s = 0.0;
  for (const Vec3& p : from) s += std::sqrt(to.nearest(p).squared_distance);
  return s / double(from.size());
}

}  // namespace

double add(const PointCloud& model_points, const RigidTransform& t_gt, const RigidTransform& t_est) {
  require_points(model_points.points);
  double s = 0.0;
  for (const Vec3& p : model_points.points) s += (t_est * p - t_gt * p).norm();
  return s / double(model_points.points.size());
}

double adds(const PointCloud& model_points, const RigidTransform& t_gt, const RigidTransform& t_est) {
  require_points(model_points.points);
  const std::vector<Vec3> est = transformed(model_points.points, t_est);
  const std::vector<Vec3> gt = transformed(model_points.points, t_gt);
  return mean_nearest(gt, detail::KdTree3(est));
}

double add_recall(const PointCloud& model_points, double diameter, std::span<const PosePair> pairs,
                  double threshold_factor) {
  if (!(diameter > 0.0)) throw Error(ErrorCode::kInvalidArgument, "diameter must be positive");
  if (pairs.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& [gt, est] : pairs) hits += add(model_points, gt, est) < threshold_factor * diameter ? 1 : 0;
  return double(hits) / double(pairs.size());
}

double auc(std::span<const double> errors, double max_threshold) {
  if (!(max_threshold > 0.0)) throw Error(ErrorCode::kInvalidArgument, "AUC threshold must be positive");
  if (errors.empty()) return 0.0;
  // recall(t) is a step function; its integral over [0, max] is the sum of
  // the lengths each error stays under the curve.
  double s = 0.0;
  for (double e : errors) s += std::max(0.0, 1.0 - e / max_threshold);
  return s / double(errors.size());
}

double add_auc(const PointCloud& model_points, std::span<const PosePair> pairs, double max_threshold) {
  std::vector<double> errors;
  for (const auto& [gt, est] : pairs) errors.push_back(add(model_points, gt, est));
  return auc(errors, max_threshold);
}

SymmetrySet SymmetrySet::discrete(std::span<const RigidTransform> transforms) {
  SymmetrySet s;
  for (const RigidTransform& t : transforms) {
    if (!(t == RigidTransform())) s.transforms.push_back(t);
  }
  return s;
}

SymmetrySet SymmetrySet::continuous(const Vec3& axis, const Vec3& point, int steps) {
  if (steps < 1 || !(axis.norm() > 0.0)) throw Error(ErrorCode::kInvalidArgument, "bad continuous symmetry");
  SymmetrySet s;
  const Vec3 a = axis.normalized();
  for (int i = 1; i < steps; ++i) {
    const Mat3 r = exp_so3(a * (2.0 * M_PI * i / steps));
    s.transforms.emplace_back(r, point - r * point);
  }
  return s;
}

double mssd(const TriangleMesh& mesh, const SymmetrySet& symmetries, const RigidTransform& t_gt,
            const RigidTransform& t_est) {
  require_points(mesh.vertices);
  if (symmetries.transforms.empty()) throw Error(ErrorCode::kInvalidArgument, "empty symmetry set");
  const std::vector<Vec3> est = transformed(mesh.vertices, t_est);
  double best = std::numeric_limits<double>::infinity();
  for (const RigidTransform& s : symmetries.transforms) {
    const RigidTransform g = compose(t_gt, s);
    double worst = 0.0;
    for (std::size_t i = 0; i < est.size(); ++i) worst = std::max(worst, (est[i] - g * mesh.vertices[i]).norm());
    best = std::min(best, worst);
  }
  return best;
}

double mspd(const TriangleMesh& mesh, const SymmetrySet& symmetries, const CameraIntrinsics& k,
            const RigidTransform& t_gt, const RigidTransform& t_est) {
  require_points(mesh.vertices);
  if (symmetries.transforms.empty()) throw Error(ErrorCode::kInvalidArgument, "empty symmetry set");
  auto proj = [&](const Vec3& p) {
    if (p.z() <= 0.0) throw Error(ErrorCode::kBehindCamera, "model vertex behind the camera");
    return Vec2(k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy);
  };
  std::vector<Vec2> est(mesh.vertices.size());
  for (std::size_t i = 0; i < est.size(); ++i) est[i] = proj(t_est * mesh.vertices[i]);
  double best = std::numeric_limits<double>::infinity();
  for (const RigidTransform& s : symmetries.transforms) {
    const RigidTransform g = compose(t_gt, s);
    double worst = 0.0;
    for (std::size_t i = 0; i < est.size(); ++i) worst = std::max(worst, (est[i] - proj(g * mesh.vertices[i])).norm());
    best = std::min(best, worst);
  }
  return best;
}

std::vector<double> vsd(const TriangleMesh& mesh, const CameraIntrinsics& k, const RigidTransform& t_gt,
                        const RigidTransform& t_est, const DepthMap& obs_depth, std::span<const double> taus,
                        double delta) {
  const RenderResult gt = rasterize(mesh, k, t_gt);
  DepthMap est_depth(k.width, k.height, 0.0);
  try {
    est_depth = rasterize(mesh, k, t_est).depth;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kEmptyRender) throw;
  }
  if (obs_depth.width != k.width || obs_depth.height != k.height) {
    throw Error(ErrorCode::kInvalidArgument, "observation depth does not match intrinsics");
  }
  auto visible = [&](double model, double observed) {
    return model > 0.0 && observed > 0.0 && model - observed <= delta;
  };
  std::vector<std::size_t> good(taus.size(), 0);
  std::size_t uni = 0;
  for (std::size_t i = 0; i < gt.depth.data.size(); ++i) {
    const double dg = gt.depth.data[i];
    const double de = est_depth.data[i];
    const double dobs = obs_depth.data[i];
    const bool vg = visible(dg, dobs);
    const bool ve = visible(de, dobs) || (vg && de > 0.0);
    if (!vg && !ve) continue;
    ++uni;
    if (vg && ve) {
      const double diff = std::abs(dg - de);
      for (std::size_t t = 0; t < taus.size(); ++t) good[t] += diff < taus[t] ? 1 : 0;
    }
  }
  std::vector<double> out(taus.size(), 1.0);
  if (uni == 0) return out;
  for (std::size_t t = 0; t < taus.size(); ++t) out[t] = 1.0 - double(good[t]) / double(uni);
  return out;
}

double vsd(const TriangleMesh& mesh, const CameraIntrinsics& k, const RigidTransform& t_gt,
           const RigidTransform& t_est, const DepthMap& obs_depth, double tau, double delta) {
  const double taus[1] = {tau};
  return vsd(mesh, k, t_gt, t_est, obs_depth, taus, delta).front();
}

std::vector<double> bop_fractions() {
  std::vector<double> f;
  for (int i = 1; i <= 10; ++i) f.push_back(0.05 * i);
  return f;
}

RecallSummary bop_average_recall(std::span<const AnnotationErrors> errors, int image_width) {
  RecallSummary out;
  if (errors.empty()) return out;
  const std::vector<double> fr = bop_fractions();
  const double r = image_width / 640.0;
  double vsd_hits = 0.0, mssd_hits = 0.0, mspd_hits = 0.0;
  for (const AnnotationErrors& a : errors) {
    if (a.vsd.size() != fr.size()) throw Error(ErrorCode::kInvalidArgument, "need one VSD value per tau");
    for (double e : a.vsd) {
      for (double theta : fr) vsd_hits += e < theta ? 1.0 : 0.0;
    }
    for (double f : fr) {
      mssd_hits += a.mssd < f * a.diameter ? 1.0 : 0.0;
      mspd_hits += a.mspd < 100.0 * f * r ? 1.0 : 0.0;
    }
  }
  const double n = double(errors.size());
  out.vsd_recall = vsd_hits / (n * double(fr.size() * fr.size()));
  out.mssd_recall = mssd_hits / (n * double(fr.size()));
  out.mspd_recall = mspd_hits / (n * double(fr.size()));
  out.ar = (out.vsd_recall + out.mssd_recall + out.mspd_recall) / 3.0;
  return out;
}

double chamfer(const PointCloud& a, const PointCloud& b) {
  require_points(a.points);
  require_points(b.points);
  return 0.5 * (mean_nearest(a.points, detail::KdTree3(b.points)) + mean_nearest(b.points, detail::KdTree3(a.points)));
}

double diameter(std::span<const Vec3> points) {
  if (points.size() < 2) throw Error(ErrorCode::kEmptyModel, "diameter needs at least two points");
  if (points.size() <= 5000) {
    double best = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      for (std::size_t j = i + 1; j < points.size(); ++j) best = std::max(best, (points[i] - points[j]).squaredNorm());
    }
    return std::sqrt(best);
  }
  // Exact search with pruning: |pi - pj| <= ri + rj around the centroid.
  Vec3 c = Vec3::Zero();
  for (const Vec3& p : points) c += p;
  c /= double(points.size());
  std::vector<std::pair<double, std::size_t>> by_radius;
  by_radius.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) by_radius.emplace_back((points[i] - c).norm(), i);
  std::sort(by_radius.begin(), by_radius.end(), std::greater<>());
  double best = 0.0;
  for (std::size_t a = 0; a < by_radius.size(); ++a) {
    const auto [ra, ia] = by_radius[a];
    if (2.0 * ra <= best) break;
    for (std::size_t b = a + 1; b < by_radius.size(); ++b) {
      const auto [rb, ib] = by_radius[b];
      if (ra + rb <= best) break;
      best = std::max(best, (points[ia] - points[ib]).norm());
    }
  }
  return best;
}

double diameter(const TriangleMesh& mesh) { return diameter(std::span<const Vec3>(mesh.vertices)); }

PointCloud model_points(const TriangleMesh& mesh, std::size_t max_vertices, std::size_t samples, std::uint64_t seed) {
  require_points(mesh.vertices);
  PointCloud out;
  out.frame = Frame::kObject;
  if (mesh.vertices.size() <= max_vertices || mesh.faces.empty()) {
    out.points = mesh.vertices;
    return out;
  }
  std::vector<double> cumulative;
  cumulative.reserve(mesh.faces.size());
  double total = 0.0;
  for (const auto& f : mesh.faces) {
    const Vec3& a = mesh.vertices[std::size_t(f[0])];
    total += 0.5 * (mesh.vertices[std::size_t(f[1])] - a).cross(mesh.vertices[std::size_t(f[2])] - a).norm();
    cumulative.push_back(total);
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t s = 0; s < samples; ++s) {
    const double target = unit(rng) * total;
    const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), target);
    const auto& f = mesh.faces[std::min(std::size_t(it - cumulative.begin()), mesh.faces.size() - 1)];
    double u = unit(rng), v = unit(rng);
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    const Vec3& a = mesh.vertices[std::size_t(f[0])];
    out.points.push_back(a + u * (mesh.vertices[std::size_t(f[1])] - a) + v * (mesh.vertices[std::size_t(f[2])] - a));
  }
  return out;
}

MetricReport mean_report(std::span<const ReportRow> rows) {
  MetricReport m;
  if (rows.empty()) return m;
  for (const ReportRow& r : rows) {
    m.add += r.metrics.add;
    m.adds += r.metrics.adds;
    m.vsd_recall += r.metrics.vsd_recall;
    m.mssd_recall += r.metrics.mssd_recall;
    m.mspd_recall += r.metrics.mspd_recall;
    m.chamfer += r.metrics.chamfer;
  }
  const double n = double(rows.size());
  m.add /= n;
  m.adds /= n;
  m.vsd_recall /= n;
  m.mssd_recall /= n;
  m.mspd_recall /= n;
  m.chamfer /= n;
  m.ar = (m.vsd_recall + m.mssd_recall + m.mspd_recall) / 3.0;
  return m;
}

void write_report_csv(const std::filesystem::path& path, std::span<const ReportRow> rows) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::kIoFailure, "cannot write " + path.string());
  f << "scene,image,obj,add,adds,vsd_recall,mssd_recall,mspd_recall,ar,chamfer\n";
  f << std::setprecision(10);
  auto line = [&](const std::string& s, const std::string& i, const std::string& o, const MetricReport& m) {
    f << s << ',' << i << ',' << o << ',' << m.add << ',' << m.adds << ',' << m.vsd_recall << ',' << m.mssd_recall
      << ',' << m.mspd_recall << ',' << m.ar << ',' << m.chamfer << '\n';
  };
  for (const ReportRow& r : rows) line(r.scene, r.image, r.obj, r.metrics);
  line("mean", "", "", mean_report(rows));
  if (!f) throw Error(ErrorCode::kIoFailure, "write failed for " + path.string());
}

void write_report_json(const std::filesystem::path& path, std::span<const ReportRow> rows) {
  auto to_json = [](const MetricReport& m) {
    return nlohmann::json{{"add", m.add},
                          {"adds", m.adds},
                          {"vsd_recall", m.vsd_recall},
                          {"mssd_recall", m.mssd_recall},
                          {"mspd_recall", m.mspd_recall},
                          {"ar", m.ar},
                          {"chamfer", m.chamfer}};
  };
  nlohmann::json rows_json = nlohmann::json::array();
  for (const ReportRow& r : rows) {
    nlohmann::json j = to_json(r.metrics);
    j["scene"] = r.scene;
    j["image"] = r.image;
    j["obj"] = r.obj;
    rows_json.push_back(j);
  }
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::kIoFailure, "cannot write " + path.string());
  f << nlohmann::json{{"rows", rows_json}, {"summary", to_json(mean_report(rows))}}.dump(2) << '\n';
}

}  // namespace metric_align
