#include "metric_align/match.hpp"

#include "metric_align/error.hpp"
#include "metric_align/parallel.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <optional>
#include <random>

namespace metric_align {

void MatcherConfig::validate() const {
  if (!(outlier_fraction >= 0.0 && outlier_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "outlier_fraction must be in [0, 1)");
  }
  if (max_matches < 4) throw Error(ErrorCode::kInvalidArgument, "max_matches must be at least 4");
  if (!(pixel_noise_sigma >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "pixel_noise_sigma must be >= 0");
  if (!(ratio_test > 0.0 && ratio_test <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "ratio_test must be in (0, 1]");
  if (!(max_viewpoint_change_deg > 0.0 && max_viewpoint_change_deg <= 180.0)) {
    throw Error(ErrorCode::kInvalidArgument, "max_viewpoint_change_deg must be in (0, 180]");
  }
}

namespace {

std::mt19937_64 view_rng(std::uint64_t seed, std::size_t view_index) {
  const auto v = std::uint64_t(view_index);
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(v), std::uint32_t(v >> 32)};
  return std::mt19937_64(seq);
}

Vec2 clamp_to_image(const Vec2& p, const CameraIntrinsics& k) {
  return {std::clamp(p.x(), 0.0, double(k.width - 1)), std::clamp(p.y(), 0.0, double(k.height - 1))};
}

}  // namespace

MatchSet oracle_match(const TemplateView& tmpl, const Observation& obs, const ScaledModelPose& gt_obs_pose,
                      const MatcherConfig& cfg, std::size_t view_index) {
  cfg.validate();
  const CameraIntrinsics& kt = tmpl.intrinsics;
  const CameraIntrinsics& ko = obs.intrinsics;
  const RigidTransform object_from_camera = invert(tmpl.camera_from_object);
  // Camera centers in the normalized model frame.
  const Vec3 eye_t = object_from_camera.translation() / tmpl.model_scale;
  const Vec3 eye_o = gt_obs_pose.pose().rotation().transpose() * -gt_obs_pose.pose().translation() / gt_obs_pose.scale();
  const double min_cos = std::cos(cfg.max_viewpoint_change_deg * M_PI / 180.0);
  const std::size_t area = count_nonzero(tmpl.mask);
  const int stride = std::max(1, int(std::lround(std::sqrt(double(area) / cfg.max_matches))));

  MatchSet out;
  out.view_index = view_index;
  for (int y = stride / 2; y < tmpl.mask.height; y += stride) {
    for (int x = stride / 2; x < tmpl.mask.width; x += stride) {
      const double dt = tmpl.depth.at(x, y);
      if (!tmpl.mask.at(x, y) || dt <= 0.0) continue;
      const Vec2 tp(x, y);
      const Vec3 model = object_from_camera * backproject(kt, tp, dt) / tmpl.model_scale;
      const Vec3 cam = apply_similarity(gt_obs_pose, model);
      if (cam.z() <= 0.0) continue;
      if ((eye_t - model).normalized().dot((eye_o - model).normalized()) < min_cos) continue;
      const Vec2 op = project(ko, cam);
      if (!ko.contains(op)) continue;
      const int xi = int(std::lround(op.x()));
      const int yi = int(std::lround(op.y()));
      if (!obs.mask.in_bounds(xi, yi) || !obs.mask.at(xi, yi)) continue;
      const auto d = sample_depth(obs.depth, op, &obs.mask);
      if (!d || std::abs(*d - cam.z()) >= 0.01 * cam.z() + 1e-4) continue;
      out.pairs.push_back({tp, op});
    }
  }
  if (out.pairs.empty()) {
    throw Error(ErrorCode::kNoCovisibleSurface, "template and observation share no visible surface");
  }
  if (out.pairs.size() > std::size_t(cfg.max_matches)) {
    std::vector<PixelPair> kept;
    kept.reserve(std::size_t(cfg.max_matches));
    for (int i = 0; i < cfg.max_matches; ++i) {
      kept.push_back(out.pairs[std::size_t(i) * out.pairs.size() / std::size_t(cfg.max_matches)]);
    }
    out.pairs = std::move(kept);
  }

  std::vector<Vec2> masked;
  if (cfg.outlier_fraction > 0.0) {
    for (int y = 0; y < obs.mask.height; ++y) {
      for (int x = 0; x < obs.mask.width; ++x) {
        if (obs.mask.at(x, y)) masked.emplace_back(x, y);
      }
    }
  }
  std::mt19937_64 rng = view_rng(cfg.rng_seed, view_index);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  out.outlier_flags.assign(out.pairs.size(), false);
  for (std::size_t i = 0; i < out.pairs.size(); ++i) {
    PixelPair& p = out.pairs[i];
    if (cfg.pixel_noise_sigma > 0.0) {
      const double nx = noise(rng);
      const double ny = noise(rng);
      p.observation_pixel = clamp_to_image(p.observation_pixel + cfg.pixel_noise_sigma * Vec2(nx, ny), ko);
    }
    if (!masked.empty() && unit(rng) < cfg.outlier_fraction) {
      std::uniform_int_distribution<std::size_t> pick(0, masked.size() - 1);
      p.observation_pixel = masked[pick(rng)];
      out.outlier_flags[i] = true;
    }
  }
  return out;
}

MatchSet OracleMatcher::match(const TemplateView& tmpl, const Observation& obs, std::size_t view_index) const {
  try {
    return oracle_match(tmpl, obs, gt_, cfg_, view_index);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNoCovisibleSurface) throw;
    MatchSet empty;
    empty.view_index = view_index;
    return empty;
  }
}

// ---------------------------------------------------------------------------
// Depth-patch matcher

namespace {

constexpr int kRings = 4;
constexpr int kSectors = 16;
constexpr int kDescriptorSize = kRings * kSectors;
constexpr float kBackground = 4.0f;
constexpr int kMaxKeypoints = 400;
constexpr double kMinResponse = 1e-7;
constexpr double kCurvatureGain = 10.0;

using Descriptor = std::array<float, kDescriptorSize>;

struct Keypoint {
  int x;
  int y;
  double response;
};

struct Features {
  std::vector<Keypoint> keypoints;
  std::vector<Descriptor> descriptors;
};

// Summed-area table with one row/column of zero padding.
class Integral {
 public:
  Integral(int w, int h) : w_(w), h_(h), s_(std::size_t(w + 1) * std::size_t(h + 1), 0.0) {}
  void build(const std::vector<double>& v) {
    for (int y = 0; y < h_; ++y) {
      double row = 0.0;
      for (int x = 0; x < w_; ++x) {
        row += v[std::size_t(y) * std::size_t(w_) + std::size_t(x)];
        at(x + 1, y + 1) = at(x + 1, y) + row;
      }
    }
  }
  // Sum over the clamped box [x0, x1] x [y0, y1].
  double box(int x0, int y0, int x1, int y1) const {
    x0 = std::max(x0, 0);
    y0 = std::max(y0, 0);
    x1 = std::min(x1, w_ - 1);
    y1 = std::min(y1, h_ - 1);
    if (x0 > x1 || y0 > y1) return 0.0;
    return at(x1 + 1, y1 + 1) - at(x0, y1 + 1) - at(x1 + 1, y0) + at(x0, y0);
  }

 private:
  double& at(int x, int y) { return s_[std::size_t(y) * std::size_t(w_ + 1) + std::size_t(x)]; }
  double at(int x, int y) const { return s_[std::size_t(y) * std::size_t(w_ + 1) + std::size_t(x)]; }
  int w_, h_;
  std::vector<double> s_;
};

// Plain bilinear depth; the descriptor wants smooth values, not crease safety.
std::optional<double> bilinear(const DepthMap& depth, const Mask& mask, double x, double y) {
  const int x0 = int(std::floor(x));
  const int y0 = int(std::floor(y));
  const double ax = x - x0;
  const double ay = y - y0;
  double acc = 0.0;
  for (int j = 0; j < 2; ++j) {
    for (int i = 0; i < 2; ++i) {
      const int xi = x0 + i, yi = y0 + j;
      if (!depth.in_bounds(xi, yi) || !mask.at(xi, yi) || depth.at(xi, yi) <= 0.0) return std::nullopt;
      acc += (i ? ax : 1.0 - ax) * (j ? ay : 1.0 - ay) * depth.at(xi, yi);
    }
  }
  return acc;
}

Features extract_features(const DepthMap& depth, const Mask& mask, const CameraIntrinsics& k) {
  const int w = depth.width;
  const int h = depth.height;
  auto valid = [&](int x, int y) { return depth.in_bounds(x, y) && mask.at(x, y) && depth.at(x, y) > 0.0; };

  std::size_t area = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) area += valid(x, y) ? 1 : 0;
  }
  Features out;
  if (area < 64) return out;
  const double mask_radius = std::sqrt(double(area) / M_PI);
  const double patch_radius = std::max(4.0, 0.35 * mask_radius);
  const int nms = std::max(2, int(std::lround(0.05 * mask_radius)));
  const double f = 0.5 * (k.fx + k.fy);

  const std::size_t n = std::size_t(w) * std::size_t(h);
  std::vector<double> inside(n, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) inside[std::size_t(y) * std::size_t(w) + std::size_t(x)] = valid(x, y) ? 1.0 : 0.0;
  }
  // Curvature response: difference of two box means of inverse depth,
  // relative to the centre value. Inverse depth is affine on a plane, so flat
  // regions give exactly nothing; bumps, dents and saddles give extrema.
  std::vector<double> inv_depth(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (inside[i]) inv_depth[i] = 1.0 / depth.data[i];
  }
  Integral iinv(w, h), iinside(w, h);
  iinv.build(inv_depth);
  iinside.build(inside);
  const int inner = std::max(2, int(std::lround(0.04 * mask_radius)));
  const int outer = 2 * inner;
  const int margin = outer;
  const double inner_area = double((2 * inner + 1) * (2 * inner + 1));
  const double outer_area = double((2 * outer + 1) * (2 * outer + 1));
  std::vector<double> response(n, 0.0);
  double max_response = 0.0;
  for (int y = margin; y < h - margin; ++y) {
    for (int x = margin; x < w - margin; ++x) {
      const std::size_t i = std::size_t(y) * std::size_t(w) + std::size_t(x);
      if (!inside[i]) continue;
      if (iinside.box(x - outer, y - outer, x + outer, y + outer) < outer_area) continue;
      const double m1 = iinv.box(x - inner, y - inner, x + inner, y + inner) / inner_area;
      const double m2 = iinv.box(x - outer, y - outer, x + outer, y + outer) / outer_area;
      const double r = std::abs(m1 - m2) * depth.data[i];
      response[i] = r;
      max_response = std::max(max_response, r);
    }
  }
  if (max_response <= kMinResponse) return out;
  const double threshold = std::max(kMinResponse, 0.05 * max_response);

  std::vector<Keypoint> candidates;
  for (int y = margin; y < h - margin; ++y) {
    for (int x = margin; x < w - margin; ++x) {
      const double r = response[std::size_t(y) * std::size_t(w) + std::size_t(x)];
      if (r <= threshold) continue;
      bool is_max = true;
      for (int dy = -nms; dy <= nms && is_max; ++dy) {
        for (int dx = -nms; dx <= nms; ++dx) {
          if (!dx && !dy) continue;
          const int nx = x + dx, ny = y + dy;
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          const double o = response[std::size_t(ny) * std::size_t(w) + std::size_t(nx)];
          // Ties go to the earlier pixel in raster order.
          if (o > r || (o == r && (dy < 0 || (dy == 0 && dx < 0)))) {
            is_max = false;
            break;
          }
        }
      }
      if (is_max) candidates.push_back({x, y, r});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Keypoint& a, const Keypoint& b) { return a.response > b.response; });
  if (candidates.size() > std::size_t(kMaxKeypoints)) candidates.resize(std::size_t(kMaxKeypoints));

  for (const Keypoint& kp : candidates) {
    const double dc = depth.at(kp.x, kp.y);
    // Relative depth on rings; the best-fit tilt is removed so the
    // descriptor keeps only curvature, which is what tells patches apart.
    std::array<double, kDescriptorSize> rel{};
    std::array<bool, kDescriptorSize> hit{};
    Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
    Vec3 atb = Vec3::Zero();
    for (int ring = 0; ring < kRings; ++ring) {
      const double rho = patch_radius * (ring + 1) / kRings;
      for (int s = 0; s < kSectors; ++s) {
        const double a = 2.0 * M_PI * s / kSectors;
        const Vec2 off(rho * std::cos(a), rho * std::sin(a));
        const auto z = bilinear(depth, mask, kp.x + off.x(), kp.y + off.y());
        if (!z) continue;
        const std::size_t idx = std::size_t(ring * kSectors + s);
        rel[idx] = (*z - dc) * f / (dc * patch_radius);
        hit[idx] = true;
        const Vec3 row(1.0, off.x() / patch_radius, off.y() / patch_radius);
        ata += row * row.transpose();
        atb += row * rel[idx];
      }
    }
    const Vec3 plane = ata.ldlt().solve(atb);
    Descriptor d;
    for (int ring = 0; ring < kRings; ++ring) {
      const double rho = (ring + 1.0) / kRings;
      for (int s = 0; s < kSectors; ++s) {
        const std::size_t idx = std::size_t(ring * kSectors + s);
        const double a = 2.0 * M_PI * s / kSectors;
        float v = kBackground;
        if (hit[idx]) {
          const double flat = plane.x() + plane.y() * rho * std::cos(a) + plane.z() * rho * std::sin(a);
          v = float(std::clamp(kCurvatureGain * (rel[idx] - flat), -3.0, 3.0));
        }
        d[idx] = v;
      }
    }
    out.keypoints.push_back(kp);
    out.descriptors.push_back(d);
  }
  return out;
}

// Sectors start on the image x axis; the best cyclic sector shift absorbs
// in-plane rotation.
double descriptor_distance(const Descriptor& a, const Descriptor& b) {
  double best = std::numeric_limits<double>::infinity();
  for (int shift = 0; shift < kSectors; ++shift) {
    double s = 0.0;
    for (int ring = 0; ring < kRings && s < best; ++ring) {
      for (int k = 0; k < kSectors; ++k) {
        const double d = double(a[std::size_t(ring * kSectors + k)]) -
                         double(b[std::size_t(ring * kSectors + (k + shift) % kSectors)]);
        s += d * d;
      }
    }
    best = std::min(best, s);
  }
  return std::sqrt(best / kDescriptorSize);
}

}  // namespace

std::vector<Vec2> detect_depth_keypoints(const DepthMap& depth, const Mask& mask, const CameraIntrinsics& k) {
  std::vector<Vec2> out;
  for (const Keypoint& kp : extract_features(depth, mask, k).keypoints) out.emplace_back(kp.x, kp.y);
  return out;
}

MatchSet depth_patch_match(const TemplateView& tmpl, const Observation& obs, const MatcherConfig& cfg,
                           std::size_t view_index) {
  cfg.validate();
  MatchSet out;
  out.view_index = view_index;
  const Features ft = extract_features(tmpl.depth, tmpl.mask, tmpl.intrinsics);
  if (ft.keypoints.empty()) return out;
  const Features fo = extract_features(obs.depth, obs.mask, obs.intrinsics);
  if (fo.keypoints.size() < 2 || ft.keypoints.size() < 2) return out;

  const std::size_t nt = ft.keypoints.size();
  const std::size_t no = fo.keypoints.size();
  std::vector<double> dist(nt * no);
  for (std::size_t i = 0; i < nt; ++i) {
    for (std::size_t j = 0; j < no; ++j) dist[i * no + j] = descriptor_distance(ft.descriptors[i], fo.descriptors[j]);
  }
  std::vector<std::size_t> best_t(no);
  for (std::size_t j = 0; j < no; ++j) {
    std::size_t b = 0;
    for (std::size_t i = 1; i < nt; ++i) {
      if (dist[i * no + j] < dist[b * no + j]) b = i;
    }
    best_t[j] = b;
  }
  struct Scored {
    double distance;
    PixelPair pair;
  };
  std::vector<Scored> accepted;
  for (std::size_t i = 0; i < nt; ++i) {
    std::size_t b = 0;
    double d1 = std::numeric_limits<double>::infinity(), d2 = d1;
    for (std::size_t j = 0; j < no; ++j) {
      const double d = dist[i * no + j];
      if (d < d1) {
        d2 = d1;
        d1 = d;
        b = j;
      } else if (d < d2) {
        d2 = d;
      }
    }
    if (best_t[b] != i || !(d1 < cfg.ratio_test * d2) || d1 > cfg.max_descriptor_distance) continue;
    accepted.push_back({d1,
                        {Vec2(ft.keypoints[i].x, ft.keypoints[i].y), Vec2(fo.keypoints[b].x, fo.keypoints[b].y)}});
  }
  std::stable_sort(accepted.begin(), accepted.end(),
                   [](const Scored& a, const Scored& b) { return a.distance < b.distance; });
  if (accepted.size() > std::size_t(cfg.max_matches)) accepted.resize(std::size_t(cfg.max_matches));
  for (const Scored& s : accepted) out.pairs.push_back(s.pair);
  return out;
}

MatchSet DepthPatchMatcher::match(const TemplateView& tmpl, const Observation& obs, std::size_t view_index) const {
  return depth_patch_match(tmpl, obs, cfg_, view_index);
}

const MatchSet& select_best_view(std::span<const MatchSet> matches) {
  if (matches.empty()) throw Error(ErrorCode::kInvalidArgument, "no match sets to select from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < matches.size(); ++i) {
    const auto& a = matches[i];
    const auto& b = matches[best];
    if (a.score() > b.score() || (a.score() == b.score() && a.view_index < b.view_index)) best = i;
  }
  if (matches[best].score() == 0) throw Error(ErrorCode::kAllEmpty, "every template produced zero matches");
  return matches[best];
}

std::vector<MatchSet> match_all(const Matcher& matcher, std::span<const TemplateView> templates,
                                const Observation& obs) {
  std::vector<MatchSet> out(templates.size());
  parallel_for(templates.size(), [&](std::size_t i) { out[i] = matcher.match(templates[i], obs, i); });
  return out;
}

void write_match_dump(const std::filesystem::path& path, std::span<const MatchSet> matches) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::kIoFailure, "cannot write " + path.string());
  for (const MatchSet& m : matches) {
    for (const PixelPair& p : m.pairs) {
      const nlohmann::json j = {{"view", m.view_index},
                                {"tu", p.template_pixel.x()},
                                {"tv", p.template_pixel.y()},
                                {"ou", p.observation_pixel.x()},
                                {"ov", p.observation_pixel.y()}};
      f << j.dump() << '\n';
    }
  }
}

}  // namespace metric_align
