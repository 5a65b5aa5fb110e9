#pragma once

#include "metric_align/geom.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

namespace metric_align {

/// Row-major single-channel image.
template <typename T>
struct Image {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, T fill = T{}) : width(w), height(h), data(std::size_t(w) * std::size_t(h), fill) {}

  T& at(int x, int y) { return data[std::size_t(y) * std::size_t(width) + std::size_t(x)]; }
  const T& at(int x, int y) const { return data[std::size_t(y) * std::size_t(width) + std::size_t(x)]; }
  bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  bool operator==(const Image&) const = default;
};

/// Per-pixel z-depth (meters, or normalized units for normalized renders); 0 = no surface.
using DepthMap = Image<double>;
/// Binary mask; nonzero = covered.
using Mask = Image<std::uint8_t>;

struct ColorImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;
};

std::size_t count_nonzero(const Mask& mask);

/// Depth at a sub-pixel location. Inverse depth is interpolated bilinearly
/// when the four neighbours are valid, agree within `max_relative_spread`
/// and look locally planar (exact on planes); otherwise the nearest valid
/// pixel is used.
/// Only pixels inside `mask` count as valid when a mask is given.
std::optional<double> sample_depth(const DepthMap& depth, const Vec2& pixel, const Mask* mask = nullptr,
                                   double max_relative_spread = 0.25);

/// Like sample_depth but without the nearest-pixel fallback: only exact
/// pixel centers or agreeing four-neighbourhoods yield a value.
std::optional<double> sample_depth_strict(const DepthMap& depth, const Vec2& pixel, const Mask* mask = nullptr,
                                          double max_relative_spread = 0.25);

}  // namespace metric_align
