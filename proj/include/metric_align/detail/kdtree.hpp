#pragma once

#include "metric_align/geom.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

namespace metric_align::detail {

/// Static 3D k-d tree (implicit, median-split) for exact nearest-neighbour queries.
class KdTree3 {
 public:
  struct Hit {
    std::size_t index = 0;
    double squared_distance = std::numeric_limits<double>::infinity();
  };

  explicit KdTree3(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    axis_.assign(points_.size(), 0);
    build(0, order_.size());
  }

  bool empty() const { return points_.empty(); }
  std::size_t size() const { return points_.size(); }

  Hit nearest(const Vec3& q) const {
    Hit best;
    if (!points_.empty()) search(0, order_.size(), q, best);
    return best;
  }

 private:
  void build(std::size_t lo, std::size_t hi) {
    if (hi - lo <= 1) return;
    Vec3 mn = points_[order_[lo]];
    Vec3 mx = mn;
    for (std::size_t i = lo; i < hi; ++i) {
      mn = mn.cwiseMin(points_[order_[i]]);
      mx = mx.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (mx - mn).maxCoeff(&axis);
    const std::size_t mid = lo + (hi - lo) / 2;
    std::nth_element(order_.begin() + std::ptrdiff_t(lo), order_.begin() + std::ptrdiff_t(mid),
                     order_.begin() + std::ptrdiff_t(hi), [&](std::size_t a, std::size_t b) {
                       return points_[a][axis] < points_[b][axis];
                     });
    axis_[mid] = std::uint8_t(axis);
    build(lo, mid);
    build(mid + 1, hi);
  }

  void search(std::size_t lo, std::size_t hi, const Vec3& q, Hit& best) const {
    if (lo >= hi) return;
    const std::size_t mid = lo + (hi - lo) / 2;
    const Vec3& p = points_[order_[mid]];
    const double d2 = (p - q).squaredNorm();
    if (d2 < best.squared_distance) best = {order_[mid], d2};
    if (hi - lo == 1) return;
    const int axis = axis_[mid];
    const double diff = q[axis] - p[axis];
    if (diff < 0.0) {
      search(lo, mid, q, best);
      if (diff * diff < best.squared_distance) search(mid + 1, hi, q, best);
    } else {
      search(mid + 1, hi, q, best);
      if (diff * diff < best.squared_distance) search(lo, mid, q, best);
    }
  }

  std::vector<Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<std::uint8_t> axis_;
};

}  // namespace metric_align::detail
