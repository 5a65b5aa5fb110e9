#include "metric_align/pnp.hpp"

#include "metric_align/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace metric_align {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;

RigidTransform kabsch(std::span<const Vec3> world, std::span<const Vec3> cam) {
  Vec3 cw = Vec3::Zero(), cc = Vec3::Zero();
  for (std::size_t i = 0; i < world.size(); ++i) {
    cw += world[i];
    cc += cam[i];
  }
  cw /= double(world.size());
  cc /= double(world.size());
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < world.size(); ++i) h += (cam[i] - cc) * (world[i] - cw).transpose();
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  const Mat3 r = svd.matrixU() * d * svd.matrixV().transpose();
  return {r, cc - r * cw};
}

double mean_squared_reprojection(std::span<const Correspondence2D3D> corrs, const CameraIntrinsics& k,
                                 const RigidTransform& pose) {
  double s = 0.0;
  for (const auto& c : corrs) {
    const double e = reprojection_error(c, k, pose);
    if (!std::isfinite(e)) return kInf;
    s += e * e;
  }
  return s / double(corrs.size());
}

class Epnp {
 public:
  Epnp(std::span<const Correspondence2D3D> corrs, const CameraIntrinsics& k) : corrs_(corrs), k_(k) {
    choose_control_points();
    compute_alphas();
  }

  RigidTransform solve() {
    const int nc = planar_ ? 3 : 4;
    const int dim = 3 * nc;
    MatX m = MatX::Zero(2 * Eigen::Index(corrs_.size()), dim);
    for (std::size_t i = 0; i < corrs_.size(); ++i) {
      const double u = corrs_[i].pixel.x(), v = corrs_[i].pixel.y();
      for (int j = 0; j < nc; ++j) {
        const double a = alphas_(Eigen::Index(i), j);
        m(2 * Eigen::Index(i), 3 * j) = a * k_.fx;
        m(2 * Eigen::Index(i), 3 * j + 2) = a * (k_.cx - u);
        m(2 * Eigen::Index(i) + 1, 3 * j + 1) = a * k_.fy;
        m(2 * Eigen::Index(i) + 1, 3 * j + 2) = a * (k_.cy - v);
      }
    }
    const MatX mtm = m.transpose() * m;
    Eigen::SelfAdjointEigenSolver<MatX> eig(mtm);
    // Ascending eigenvalues: the first columns span the approximate kernel.
    const int nvec = planar_ ? 3 : 4;
    kernel_ = eig.eigenvectors().leftCols(nvec);

    build_distance_system(nc, nvec);

    RigidTransform best;
    double best_err = kInf;
    auto consider = [&](VecX betas) {
      gauss_newton(betas);
      RigidTransform pose;
      if (!pose_from_betas(betas, pose)) return;
      const double err = mean_squared_reprojection(corrs_, k_, pose);
      if (err < best_err) {
        best_err = err;
        best = pose;
      }
    };
    consider(betas_n1());
    consider(betas_n2());
    if (!planar_) consider(betas_n3());
    if (!std::isfinite(best_err)) throw Error(ErrorCode::kDegenerateInput, "EPnP found no valid pose");
    return best;
  }

 private:
  void choose_control_points() {
    Vec3 c0 = Vec3::Zero();
    for (const auto& c : corrs_) c0 += c.point;
    c0 /= double(corrs_.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& c : corrs_) cov += (c.point - c0) * (c.point - c0).transpose();
    cov /= double(corrs_.size());
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    const Vec3 ev = eig.eigenvalues();  // ascending
    if (!(ev(2) > 0.0)) throw Error(ErrorCode::kDegenerateInput, "PnP points are coincident");
    if (ev(1) <= 1e-12 * ev(2)) throw Error(ErrorCode::kDegenerateInput, "PnP points are collinear");
    planar_ = ev(0) <= 1e-10 * ev(2);
    ctrl_.clear();
    ctrl_.push_back(c0);
    ctrl_.push_back(c0 + std::sqrt(ev(2)) * eig.eigenvectors().col(2));
    ctrl_.push_back(c0 + std::sqrt(ev(1)) * eig.eigenvectors().col(1));
    if (!planar_) ctrl_.push_back(c0 + std::sqrt(ev(0)) * eig.eigenvectors().col(0));
  }

  void compute_alphas() {
    const int nc = int(ctrl_.size());
    alphas_.resize(Eigen::Index(corrs_.size()), nc);
    if (planar_) {
      Eigen::Matrix<double, 3, 2> b;
      b.col(0) = ctrl_[1] - ctrl_[0];
      b.col(1) = ctrl_[2] - ctrl_[0];
      const Eigen::Matrix2d btb_inv = (b.transpose() * b).inverse();
      for (std::size_t i = 0; i < corrs_.size(); ++i) {
        const Eigen::Vector2d a = btb_inv * b.transpose() * (corrs_[i].point - ctrl_[0]);
        alphas_.row(Eigen::Index(i)) << 1.0 - a.sum(), a(0), a(1);
      }
    } else {
      Mat3 b;
      b.col(0) = ctrl_[1] - ctrl_[0];
      b.col(1) = ctrl_[2] - ctrl_[0];
      b.col(2) = ctrl_[3] - ctrl_[0];
      const Mat3 b_inv = b.inverse();
      for (std::size_t i = 0; i < corrs_.size(); ++i) {
        const Vec3 a = b_inv * (corrs_[i].point - ctrl_[0]);
        alphas_.row(Eigen::Index(i)) << 1.0 - a.sum(), a(0), a(1), a(2);
      }
    }
  }

  Vec3 kernel_block(int vec, int ctrl) const { return kernel_.block(3 * ctrl, vec, 3, 1); }

  // For each control-point pair: squared world distance and the differences
  // of the kernel vectors, so that |sum_k beta_k dv_k|^2 = rho.
  void build_distance_system(int nc, int nvec) {
    pairs_dv_.clear();
    rho_.clear();
    for (int i = 0; i < nc; ++i) {
      for (int j = i + 1; j < nc; ++j) {
        std::vector<Vec3> dv;
        for (int v = 0; v < nvec; ++v) dv.push_back(kernel_block(v, i) - kernel_block(v, j));
        pairs_dv_.push_back(std::move(dv));
        rho_.push_back((ctrl_[std::size_t(i)] - ctrl_[std::size_t(j)]).squaredNorm());
      }
    }
  }

  // Coefficient rows for products beta_a * beta_b, (a, b) in `terms`.
  VecX solve_products(const std::vector<std::pair<int, int>>& terms) const {
    MatX l(Eigen::Index(rho_.size()), Eigen::Index(terms.size()));
    VecX r(Eigen::Index(rho_.size()));
    for (std::size_t p = 0; p < rho_.size(); ++p) {
      for (std::size_t t = 0; t < terms.size(); ++t) {
        const auto [a, b] = terms[t];
        const double dot = pairs_dv_[p][std::size_t(a)].dot(pairs_dv_[p][std::size_t(b)]);
        l(Eigen::Index(p), Eigen::Index(t)) = a == b ? dot : 2.0 * dot;
      }
      r(Eigen::Index(p)) = rho_[p];
    }
    return l.colPivHouseholderQr().solve(r);
  }

  VecX betas_n1() const {
    VecX betas = VecX::Zero(kernel_.cols());
    const VecX x = solve_products({{0, 0}});
    betas(0) = std::sqrt(std::abs(x(0)));
    return betas;
  }

  VecX betas_n2() const {
    VecX betas = VecX::Zero(kernel_.cols());
    const VecX x = solve_products({{0, 0}, {0, 1}, {1, 1}});
    betas(0) = std::sqrt(std::abs(x(0)));
    betas(1) = std::sqrt(std::abs(x(2))) * (x(1) * x(0) < 0.0 ? -1.0 : 1.0);
    return betas;
  }

  VecX betas_n3() const {
    VecX betas = VecX::Zero(kernel_.cols());
    const VecX x = solve_products({{0, 0}, {0, 1}, {1, 1}, {0, 2}, {1, 2}, {2, 2}});
    betas(0) = std::sqrt(std::abs(x(0)));
    betas(1) = std::sqrt(std::abs(x(2))) * (x(1) * x(0) < 0.0 ? -1.0 : 1.0);
    betas(2) = betas(0) != 0.0 ? x(3) / betas(0) : 0.0;
    return betas;
  }

  void gauss_newton(VecX& betas) const {
    const Eigen::Index nb = betas.size();
    for (int iter = 0; iter < 10; ++iter) {
      MatX j(Eigen::Index(rho_.size()), nb);
      VecX e(Eigen::Index(rho_.size()));
      for (std::size_t p = 0; p < rho_.size(); ++p) {
        Vec3 d = Vec3::Zero();
        for (Eigen::Index b = 0; b < nb; ++b) d += betas(b) * pairs_dv_[p][std::size_t(b)];
        e(Eigen::Index(p)) = d.squaredNorm() - rho_[p];
        for (Eigen::Index b = 0; b < nb; ++b) j(Eigen::Index(p), b) = 2.0 * d.dot(pairs_dv_[p][std::size_t(b)]);
      }
      const VecX step = j.colPivHouseholderQr().solve(-e);
      if (!step.allFinite()) return;
      betas += step;
      if (step.norm() <= 1e-14 * std::max(1.0, betas.norm())) return;
    }
  }

  bool pose_from_betas(const VecX& betas, RigidTransform& pose) const {
    if (!betas.allFinite()) return false;
    const VecX x = kernel_ * betas;
    const int nc = int(ctrl_.size());
    std::vector<Vec3> cam(corrs_.size());
    std::vector<Vec3> world(corrs_.size());
    double mean_z = 0.0;
    for (std::size_t i = 0; i < corrs_.size(); ++i) {
      Vec3 p = Vec3::Zero();
      for (int j = 0; j < nc; ++j) p += alphas_(Eigen::Index(i), j) * x.segment<3>(3 * j);
      cam[i] = p;
      world[i] = corrs_[i].point;
      mean_z += p.z();
    }
    if (mean_z < 0.0) {
      for (Vec3& p : cam) p = -p;
    }
    try {
      pose = kabsch(world, cam);
    } catch (const Error&) {
      return false;
    }
    return true;
  }

  std::span<const Correspondence2D3D> corrs_;
  CameraIntrinsics k_;
  bool planar_ = false;
  std::vector<Vec3> ctrl_;
  MatX alphas_;
  MatX kernel_;
  std::vector<std::vector<Vec3>> pairs_dv_;
  std::vector<double> rho_;
};

Eigen::Matrix3d skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

}  // namespace

double reprojection_error(const Correspondence2D3D& c, const CameraIntrinsics& k, const RigidTransform& pose) {
  const Vec3 x = pose * c.point;
  if (x.z() <= 0.0) return kInf;
  const Vec2 p(k.fx * x.x() / x.z() + k.cx, k.fy * x.y() / x.z() + k.cy);
  return (p - c.pixel).norm();
}

RigidTransform solve_epnp(std::span<const Correspondence2D3D> corrs, const CameraIntrinsics& k) {
  if (corrs.size() < 4) throw Error(ErrorCode::kTooFewCorrespondences, "EPnP needs at least 4 correspondences");
  Epnp solver(corrs, k);
  return solver.solve();
}

RigidTransform refine_pose_lm(std::span<const Correspondence2D3D> corrs, const CameraIntrinsics& k,
                              const RigidTransform& initial, int max_iterations) {
  RigidTransform pose = initial;
  auto cost = [&](const RigidTransform& p) {
    double s = 0.0;
    for (const auto& c : corrs) {
      const Vec3 x = p * c.point;
      if (x.z() <= 0.0) return kInf;
      const Vec2 r(k.fx * x.x() / x.z() + k.cx - c.pixel.x(), k.fy * x.y() / x.z() + k.cy - c.pixel.y());
      s += r.squaredNorm();
    }
    return s;
  };
  double current = cost(pose);
  if (!std::isfinite(current)) return pose;
  double lambda = 1e-3;
  for (int iter = 0; iter < max_iterations; ++iter) {
    Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
    for (const auto& c : corrs) {
      const Vec3 x = pose * c.point;
      const double iz = 1.0 / x.z();
      const Vec2 r(k.fx * x.x() * iz + k.cx - c.pixel.x(), k.fy * x.y() * iz + k.cy - c.pixel.y());
      Eigen::Matrix<double, 2, 3> dp;
      dp << k.fx * iz, 0.0, -k.fx * x.x() * iz * iz, 0.0, k.fy * iz, -k.fy * x.y() * iz * iz;
      Eigen::Matrix<double, 3, 6> dx;
      dx.leftCols<3>() = -skew(x);
      dx.rightCols<3>() = Mat3::Identity();
      const Eigen::Matrix<double, 2, 6> j = dp * dx;
      h += j.transpose() * j;
      g += j.transpose() * r;
    }
    bool improved = false;
    for (int attempt = 0; attempt < 10 && !improved; ++attempt) {
      Eigen::Matrix<double, 6, 6> a = h;
      a.diagonal() += lambda * h.diagonal().cwiseMax(1e-12);
      const Eigen::Matrix<double, 6, 1> step = a.ldlt().solve(-g);
      if (!step.allFinite()) break;
      const Mat3 dr = exp_so3(step.head<3>());
      const RigidTransform candidate(dr * pose.rotation(), dr * pose.translation() + step.tail<3>());
      const double c = cost(candidate);
      if (c < current) {
        const double gain = current - c;
        pose = candidate;
        current = c;
        lambda = std::max(lambda * 0.3, 1e-12);
        improved = true;
        if (gain <= 1e-15 * std::max(current, 1e-30) || step.norm() < 1e-15) return pose;
      } else {
        lambda *= 10.0;
      }
    }
    if (!improved) break;
  }
  return pose;
}

PnpResult pnp_ransac(std::span<const Correspondence2D3D> corrs, const CameraIntrinsics& k, const RansacConfig& cfg) {
  const std::size_t n = corrs.size();
  if (n < 4) throw Error(ErrorCode::kTooFewCorrespondences, "PnP needs at least 4 correspondences");
  const auto needed = std::size_t(std::max<double>(std::max(cfg.min_inliers, 4), std::ceil(cfg.min_inlier_ratio * double(n))));

  auto inliers_of = [&](const RigidTransform& pose, double* total_error) {
    std::vector<std::size_t> in;
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = reprojection_error(corrs[i], k, pose);
      if (e < cfg.threshold_px) {
        in.push_back(i);
        err += e;
      }
    }
    if (total_error) *total_error = err;
    return in;
  };

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> best_inliers;
  RigidTransform best_pose;
  double best_error = kInf;
  double required = double(cfg.max_iterations);
  std::vector<std::size_t> index(n);
  for (int iter = 0; iter < cfg.max_iterations && double(iter) < required; ++iter) {
    // Partial Fisher-Yates on a fresh identity permutation keeps samples reproducible.
    for (std::size_t i = 0; i < n; ++i) index[i] = i;
    std::array<Correspondence2D3D, 4> sample;
    for (std::size_t s = 0; s < 4; ++s) {
      std::uniform_int_distribution<std::size_t> pick(s, n - 1);
      std::swap(index[s], index[pick(rng)]);
      sample[s] = corrs[index[s]];
    }
    RigidTransform pose;
    try {
      pose = solve_epnp(sample, k);
    } catch (const Error&) {
      continue;
    }
    double err = 0.0;
    std::vector<std::size_t> in = inliers_of(pose, &err);
    if (in.size() > best_inliers.size() || (in.size() == best_inliers.size() && err < best_error)) {
      best_inliers = std::move(in);
      best_pose = pose;
      best_error = err;
      const double w = double(best_inliers.size()) / double(n);
      const double p_good = std::pow(w, 4.0);
      if (p_good >= 1.0) {
        required = 0.0;
      } else if (p_good > 0.0) {
        required = std::log(1.0 - cfg.confidence) / std::log(1.0 - p_good);
      }
    }
  }
  if (best_inliers.size() < needed) {
    throw Error(ErrorCode::kNoConsensus, "RANSAC found " + std::to_string(best_inliers.size()) + " inliers, need " +
                                             std::to_string(needed));
  }

  PnpResult result;
  std::vector<Correspondence2D3D> subset;
  std::vector<std::size_t> inliers = best_inliers;
  RigidTransform pose = best_pose;
  for (int round = 0; round < 3; ++round) {
    subset.clear();
    for (std::size_t i : inliers) subset.push_back(corrs[i]);
    pose = refine_pose_lm(subset, k, pose, cfg.refine_iterations);
    std::vector<std::size_t> next = inliers_of(pose, nullptr);
    if (next == inliers) break;
    if (next.size() < needed) break;
    inliers = std::move(next);
  }
  if (inliers.size() < needed) throw Error(ErrorCode::kNoConsensus, "refined pose lost consensus");
  double sq = 0.0;
  for (std::size_t i : inliers) {
    const double e = reprojection_error(corrs[i], k, pose);
    sq += e * e;
  }
  result.pose = pose;
  result.inliers = std::move(inliers);
  result.rms_reprojection_px = std::sqrt(sq / double(result.inliers.size()));
  return result;
}

}  // namespace metric_align
