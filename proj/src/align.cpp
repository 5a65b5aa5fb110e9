#include "metric_align/align.hpp"

#include "metric_align/detail/kdtree.hpp"
#include "metric_align/error.hpp"
#include "metric_align/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace metric_align {

// ---------------------------------------------------------------------------
// Coarse stage

CoarseResult align_to_view(const Observation& obs, const TemplateView& tmpl, const MatchSet& matches,
                           const CoarseConfig& cfg) {
  const RigidTransform object_from_camera = invert(tmpl.camera_from_object);
  std::vector<Correspondence2D3D> corrs;
  std::vector<Vec3> observed;
  std::vector<bool> exact;
  corrs.reserve(matches.pairs.size());
  observed.reserve(matches.pairs.size());
  for (const PixelPair& p : matches.pairs) {
    const auto dt = sample_depth(tmpl.depth, p.template_pixel, &tmpl.mask);
    const auto dobs = sample_depth(obs.depth, p.observation_pixel, &obs.mask);
    if (!dt || !dobs) continue;
    corrs.push_back({p.observation_pixel, object_from_camera * backproject(tmpl.intrinsics, p.template_pixel, *dt)});
    observed.push_back(backproject(obs.intrinsics, p.observation_pixel, *dobs));
    exact.push_back(sample_depth_strict(obs.depth, p.observation_pixel, &obs.mask).has_value());
  }
  if (corrs.size() < std::size_t(std::max(cfg.min_matches, 4))) {
    throw Error(ErrorCode::kTooFewCorrespondences,
                std::to_string(corrs.size()) + " liftable matches, need " + std::to_string(cfg.min_matches));
  }
  const PnpResult pnp = pnp_ransac(corrs, obs.intrinsics, cfg.ransac);

  double alpha = 1.0;
  if (!cfg.lock_scale) {
    // Prefer lifts whose depth was interpolated on a smooth patch; the
    // nearest-pixel fallback biases depth near creases and silhouettes.
    std::vector<Vec3> predicted, measured;
    for (int pass = 0; pass < 2 && predicted.size() < 4; ++pass) {
      predicted.clear();
      measured.clear();
      for (std::size_t i : pnp.inliers) {
        if (pass == 0 && !exact[i]) continue;
        predicted.push_back(pnp.pose * corrs[i].point);
        measured.push_back(observed[i]);
      }
    }
    alpha = estimate_scale(predicted, measured);
  }
  CoarseResult out;
  out.alpha = alpha;
  out.pose = ScaledModelPose(alpha * tmpl.model_scale,
                             RigidTransform(pnp.pose.rotation(), alpha * pnp.pose.translation()));
  out.selected_view = matches.view_index;
  out.match_count = matches.score();
  for (std::size_t i : pnp.inliers) out.inlier_pairs.push_back(corrs[i]);
  return out;
}

CoarseResult coarse_align(const Observation& obs, std::span<const TemplateView> templates, const Matcher& matcher,
                          const CoarseConfig& cfg) {
  if (templates.empty()) throw Error(ErrorCode::kInvalidArgument, "no templates");
  if (count_nonzero(obs.mask) == 0) throw Error(ErrorCode::kInvalidArgument, "observation mask is empty");
  const std::vector<MatchSet> matches = match_all(matcher, templates, obs);
  const MatchSet& best = select_best_view(matches);
  if (best.score() < std::size_t(cfg.min_matches)) {
    throw Error(ErrorCode::kTooFewCorrespondences, "best view has " + std::to_string(best.score()) + " matches");
  }
  return align_to_view(obs, templates[best.view_index], best, cfg);
}

// ---------------------------------------------------------------------------
// ICP refiner

namespace {

struct SurfaceSamples {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;
};

SurfaceSamples observed_surface(const Observation& obs, int stride) {
  const CameraIntrinsics& k = obs.intrinsics;
  auto valid = [&](int x, int y) { return obs.mask.in_bounds(x, y) && obs.mask.at(x, y) && obs.depth.at(x, y) > 0.0; };
  auto lift = [&](int x, int y) { return backproject(k, Vec2(x, y), obs.depth.at(x, y)); };
  SurfaceSamples out;
  for (int y = 0; y < obs.mask.height; y += stride) {
    for (int x = 0; x < obs.mask.width; x += stride) {
      if (!valid(x, y) || !valid(x - 1, y) || !valid(x + 1, y) || !valid(x, y - 1) || !valid(x, y + 1)) continue;
      const Vec3 p = lift(x, y);
      Vec3 n = (lift(x + 1, y) - lift(x - 1, y)).cross(lift(x, y + 1) - lift(x, y - 1));
      const double len = n.norm();
      if (!(len > 0.0)) continue;
      n /= len;
      if (n.dot(p) > 0.0) n = -n;
      out.points.push_back(p);
      out.normals.push_back(n);
    }
  }
  return out;
}

}  // namespace

RefineStep refine_step_icp(const TriangleMesh& mesh, const Observation& obs, const ScaledModelPose& current,
                           const IcpConfig& cfg) {
  const int stride = std::max(1, cfg.stride);
  const RenderResult render = rasterize(mesh, obs.intrinsics, current);
  std::vector<Vec3> source;
  for (int y = 0; y < render.mask.height; y += stride) {
    for (int x = 0; x < render.mask.width; x += stride) {
      if (render.mask.at(x, y)) source.push_back(backproject(obs.intrinsics, Vec2(x, y), render.depth.at(x, y)));
    }
  }
  const SurfaceSamples target = observed_surface(obs, stride);
  if (target.points.size() < std::size_t(cfg.min_pairs) || source.size() < std::size_t(cfg.min_pairs)) {
    throw Error(ErrorCode::kInsufficientOverlap, "too few surface samples for ICP");
  }
  const detail::KdTree3 tree(target.points);
  const double radius = current.scale() * bounding_radius(mesh);
  const double max_distance = cfg.max_distance_factor * radius;

  Mat3 total_r = Mat3::Identity();
  Vec3 total_t = Vec3::Zero();
  Vec3 center = current.pose().translation();
  std::vector<Vec3> moved = source;
  for (int iter = 0; iter < std::max(1, cfg.inner_iterations); ++iter) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::vector<double> distances;
    for (std::size_t i = 0; i < moved.size(); ++i) {
      const auto hit = tree.nearest(moved[i]);
      const double d = std::sqrt(hit.squared_distance);
      if (d <= max_distance) {
        pairs.emplace_back(i, hit.index);
        distances.push_back(d);
      }
    }
    if (pairs.size() < std::size_t(cfg.min_pairs)) {
      if (iter == 0) {
        throw Error(ErrorCode::kInsufficientOverlap,
                    std::to_string(pairs.size()) + " ICP pairs, need " + std::to_string(cfg.min_pairs));
      }
      break;
    }
    std::vector<double> sorted = distances;
    std::nth_element(sorted.begin(), sorted.begin() + std::ptrdiff_t(sorted.size() / 2), sorted.end());
    const double cutoff = std::max(cfg.median_factor * sorted[sorted.size() / 2], 1e-6 * radius);

    Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
    std::size_t used = 0;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      if (distances[p] > cutoff) continue;
      const Vec3& q = moved[pairs[p].first];
      const Vec3& t = target.points[pairs[p].second];
      const Vec3& n = target.normals[pairs[p].second];
      Eigen::Matrix<double, 6, 1> j;
      j.head<3>() = (q - center).cross(n);
      j.tail<3>() = n;
      const double e = (q - t).dot(n);
      h += j * j.transpose();
      g += j * e;
      ++used;
    }
    if (used < std::size_t(cfg.min_pairs)) {
      if (iter == 0) throw Error(ErrorCode::kInsufficientOverlap, "too few ICP pairs after trimming");
      break;
    }
    // Light damping keeps rotations about symmetry axes from blowing up.
    h.diagonal().array() += 1e-9 * std::max(h.trace(), 1e-30);
    const Eigen::Matrix<double, 6, 1> x = h.ldlt().solve(-g);
    if (!x.allFinite()) break;
    const Mat3 dr = exp_so3(x.head<3>());
    const Vec3 dt = x.tail<3>();
    for (Vec3& q : moved) q = dr * (q - center) + center + dt;
    total_r = dr * total_r;
    total_t += dt;
    center += dt;
    if (x.head<3>().norm() < 1e-10 && dt.norm() < 1e-10 * std::max(radius, 1e-12)) break;
  }
  RefineStep step;
  step.delta_rotation = RigidTransform(total_r, Vec3::Zero()).axis_angle();
  step.delta_translation = total_t;
  step.delta_scale = 1.0;
  return step;
}

ScaledModelPose apply_step(const ScaledModelPose& pose, const RefineStep& step) {
  const Mat3 dr = exp_so3(step.delta_rotation);
  return ScaledModelPose(pose.scale() * step.delta_scale,
                         RigidTransform(dr * pose.pose().rotation(), pose.pose().translation() + step.delta_translation));
}

// ---------------------------------------------------------------------------
// Fine stage

namespace {

double consistency(const RenderResult& render, const Observation& obs, double tau) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < render.mask.data.size(); ++i) {
    const bool r = render.mask.data[i] != 0;
    const bool o = obs.mask.data[i] != 0;
    if (r || o) ++uni;
    if (r && o && std::abs(render.depth.data[i] - obs.depth.data[i]) < tau) ++inter;
  }
  return uni ? double(inter) / double(uni) : 0.0;
}

bool recoverable(ErrorCode c) {
  return c == ErrorCode::kNonPositiveScale || c == ErrorCode::kTooFewCorrespondences ||
         c == ErrorCode::kNoConsensus || c == ErrorCode::kDegenerateInput || c == ErrorCode::kAllEmpty ||
         c == ErrorCode::kNoCovisibleSurface;
}

}  // namespace

AlignmentResult fine_align(const TriangleMesh& mesh_normalized, const Observation& obs, const CoarseResult& coarse,
                           const Refiner& refiner, const Matcher& matcher, std::span<const TemplateView> templates,
                           const FineConfig& cfg) {
  AlignmentResult out;
  out.coarse_scale = coarse.pose.scale();
  ScaledModelPose pose = coarse.pose;
  double cumulative = coarse.pose.scale();
  std::size_t view = coarse.selected_view;
  const double rot_tol = cfg.rotation_tol_deg * M_PI / 180.0;

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    // (a) pose increment
    RefineStep step = refiner.step(mesh_normalized, obs, pose);
    step.delta_scale = 1.0;
    pose = apply_step(pose, step);

    // (b) scale re-estimation against the current pose
    if (cfg.scale_reoptimization) {
      double ds = 1.0;
      try {
        if (cfg.rematch_source == RematchSource::kCurrentRender) {
          RenderResult r = rasterize(mesh_normalized, obs.intrinsics, pose);
          const TemplateView current{pose.pose(), std::move(r.depth), std::move(r.mask), obs.intrinsics, pose.scale()};
          const MatchSet m = matcher.match(current, obs, view);
          ds = align_to_view(obs, current, m, cfg.rematch).alpha;
        } else {
          if (templates.empty()) throw Error(ErrorCode::kInvalidArgument, "template re-match needs templates");
          if (cfg.reselect_every > 0 && iter > 0 && iter % cfg.reselect_every == 0) {
            const std::vector<MatchSet> all = match_all(matcher, templates, obs);
            view = select_best_view(all).view_index;
          }
          const TemplateView& t = templates[view];
          const MatchSet m = matcher.match(t, obs, view);
          ds = align_to_view(obs, t, m, cfg.rematch).pose.scale() / pose.scale();
        }
        if (!(ds > 0.0) || !std::isfinite(ds)) ds = 1.0;
      } catch (const Error& e) {
        if (!recoverable(e.code())) throw;
        ds = 1.0;
      }
      step.delta_scale = ds;
      cumulative *= ds;
      pose = ScaledModelPose(cumulative, pose.pose());
    }

    IterationTrace rec;
    rec.step = step;
    try {
      rec.score = consistency(rasterize(mesh_normalized, obs.intrinsics, pose), obs, cfg.score_tau);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kEmptyRender) throw;
    }
    out.trace.push_back(rec);
    out.iterations = iter + 1;
    if (step.delta_rotation.norm() < rot_tol && step.delta_translation.norm() < cfg.translation_tol_m &&
        std::abs(step.delta_scale - 1.0) < cfg.scale_tol) {
      out.converged = true;
      break;
    }
  }
  out.pose = pose;
  out.cumulative_scale = cumulative;
  return out;
}

nlohmann::json trace_to_json(const AlignmentResult& result) {
  nlohmann::json iters = nlohmann::json::array();
  for (const IterationTrace& t : result.trace) {
    iters.push_back({{"delta_rot_deg", t.step.delta_rotation.norm() * 180.0 / M_PI},
                     {"delta_t_m", t.step.delta_translation.norm()},
                     {"delta_s", t.step.delta_scale},
                     {"score", t.score}});
  }
  return {{"coarse_scale", result.coarse_scale},
          {"cumulative_scale", result.cumulative_scale},
          {"iterations", result.iterations},
          {"converged", result.converged},
          {"trace", iters}};
}

// ---------------------------------------------------------------------------
// Query poses

HypothesisScore score_hypothesis(const TriangleMesh& mesh_metric, const Observation& obs,
                                 const RigidTransform& hypothesis, double tau) {
  const RenderResult r = rasterize(mesh_metric, obs.intrinsics, hypothesis);
  return {hypothesis, consistency(r, obs, tau)};
}

namespace {

// Rotation taking +z onto the unit vector `dir`.
Mat3 rotation_from_z(const Vec3& dir) {
  return Eigen::Quaterniond::FromTwoVectors(Vec3::UnitZ(), dir).toRotationMatrix();
}

}  // namespace

QueryResult estimate_query_pose(const TriangleMesh& mesh_metric, const Observation& query,
                                std::span<const TemplateView> templates_metric, const Matcher& matcher,
                                const Refiner& refiner, const QueryConfig& cfg) {
  if (templates_metric.empty()) throw Error(ErrorCode::kInvalidArgument, "no templates");
  std::vector<RigidTransform> hypotheses;

  std::vector<MatchSet> matches = match_all(matcher, templates_metric, query);
  try {
    const MatchSet& best = select_best_view(matches);
    if (best.score() >= std::size_t(cfg.coarse.min_matches)) {
      CoarseConfig cc = cfg.coarse;
      cc.lock_scale = true;
      hypotheses.push_back(align_to_view(query, templates_metric[best.view_index], best, cc).pose.pose());
    }
  } catch (const Error& e) {
    if (!recoverable(e.code())) throw;
  }

  // Observed point centroid for the template hypotheses.
  Vec3 centroid = Vec3::Zero();
  std::size_t count = 0;
  for (int y = 0; y < query.mask.height; ++y) {
    for (int x = 0; x < query.mask.width; ++x) {
      if (!query.mask.at(x, y) || query.depth.at(x, y) <= 0.0) continue;
      centroid += backproject(query.intrinsics, Vec2(x, y), query.depth.at(x, y));
      ++count;
    }
  }
  if (count > 0) {
    centroid /= double(count);
    const Vec3 ray = centroid.normalized();
    const Mat3 align = rotation_from_z(ray);
    const Vec3 center = centroid + ray * (0.5 * bounding_radius(mesh_metric));
    std::vector<std::size_t> order(matches.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return matches[a].score() > matches[b].score(); });
    for (int i = 0; i < cfg.top_m && std::size_t(i) < order.size(); ++i) {
      if (matches[order[std::size_t(i)]].score() == 0) break;
      const RigidTransform& t = templates_metric[order[std::size_t(i)]].camera_from_object;
      hypotheses.emplace_back(align * t.rotation(), center);
    }
  }
  if (hypotheses.empty()) throw Error(ErrorCode::kNoHypothesis, "no pose hypothesis could be generated");

  QueryResult out;
  out.hypotheses.resize(hypotheses.size());
  parallel_for(hypotheses.size(), [&](std::size_t h) {
    ScaledModelPose pose(1.0, hypotheses[h]);
    try {
      for (int s = 0; s < cfg.refine_steps; ++s) {
        RefineStep step = refiner.step(mesh_metric, query, pose);
        step.delta_scale = 1.0;
        pose = apply_step(pose, step);
      }
      out.hypotheses[h] = score_hypothesis(mesh_metric, query, pose.pose(), cfg.tau);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kInsufficientOverlap && e.code() != ErrorCode::kEmptyRender) throw;
      out.hypotheses[h] = {pose.pose(), -1.0};
    }
  });
  std::size_t best = 0;
  for (std::size_t h = 1; h < out.hypotheses.size(); ++h) {
    if (out.hypotheses[h].score > out.hypotheses[best].score) best = h;
  }
  if (out.hypotheses[best].score < 0.0) throw Error(ErrorCode::kNoHypothesis, "every hypothesis failed to refine");
  out.best_index = best;
  out.pose = out.hypotheses[best].hypothesis;
  return out;
}

}  // namespace metric_align
