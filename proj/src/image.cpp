#include "metric_align/image.hpp"

#include <algorithm>
#include <cmath>

namespace metric_align {

std::size_t count_nonzero(const Mask& mask) {
  return std::size_t(std::count_if(mask.data.begin(), mask.data.end(), [](std::uint8_t v) { return v != 0; }));
}

namespace {

constexpr double kAffineTolerance = 1e-4;

std::optional<double> sample(const DepthMap& depth, const Vec2& pixel, const Mask* mask, double max_relative_spread,
                             bool fallback) {
  auto valid = [&](int x, int y) {
    return depth.in_bounds(x, y) && depth.at(x, y) > 0.0 && (mask == nullptr || mask->at(x, y) != 0);
  };
  const double fx = std::floor(pixel.x());
  const double fy = std::floor(pixel.y());
  const int x0 = int(fx);
  const int y0 = int(fy);
  const double ax = pixel.x() - fx;
  const double ay = pixel.y() - fy;
  if (ax > 0.0 || ay > 0.0) {
    if (valid(x0, y0) && valid(x0 + 1, y0) && valid(x0, y0 + 1) && valid(x0 + 1, y0 + 1)) {
      const double d00 = depth.at(x0, y0);
      const double d10 = depth.at(x0 + 1, y0);
      const double d01 = depth.at(x0, y0 + 1);
      const double d11 = depth.at(x0 + 1, y0 + 1);
      const double lo = std::min({d00, d10, d01, d11});
      const double hi = std::max({d00, d10, d01, d11});
      const double w00 = 1.0 / d00, w10 = 1.0 / d10, w01 = 1.0 / d01, w11 = 1.0 / d11;
      // Inverse depth of a plane is affine in the pixel coordinates, so its
      // mixed second difference vanishes; creases and steps break that.
      const bool affine = std::abs(w00 + w11 - w10 - w01) <= kAffineTolerance * (1.0 / lo);
      if (hi - lo <= max_relative_spread * lo && affine) {
        const double inv = (1.0 - ay) * ((1.0 - ax) * w00 + ax * w10) + ay * ((1.0 - ax) * w01 + ax * w11);
        return 1.0 / inv;
      }
    }
  }
  if (!fallback && (ax > 0.0 || ay > 0.0)) return std::nullopt;
  const int xi = int(std::lround(pixel.x()));
  const int yi = int(std::lround(pixel.y()));
  if (valid(xi, yi)) return depth.at(xi, yi);
  return std::nullopt;
}

}  // namespace

std::optional<double> sample_depth(const DepthMap& depth, const Vec2& pixel, const Mask* mask,
                                   double max_relative_spread) {
  return sample(depth, pixel, mask, max_relative_spread, true);
}

std::optional<double> sample_depth_strict(const DepthMap& depth, const Vec2& pixel, const Mask* mask,
                                          double max_relative_spread) {
  return sample(depth, pixel, mask, max_relative_spread, false);
}

}  // namespace metric_align
