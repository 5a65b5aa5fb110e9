#pragma once

#include "metric_align/geom.hpp"
#include "metric_align/metrics.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace metric_align {

/// One row of an estimates CSV: scene index, image index, object id and the
/// camera-from-model pose in meters.
struct Estimate {
  int scene = 0;
  int image = 0;
  int obj = 0;
  RigidTransform pose;
};

/// Columns: scene,image,obj,r11..r33 (row-major),tx,ty,tz. An optional header
/// line starting with "scene" is skipped. Throws kFormatError on bad rows.
std::vector<Estimate> read_estimates_csv(const std::filesystem::path& path);
void write_estimates_csv(const std::filesystem::path& path, std::span<const Estimate> estimates);

/// Every annotation of a generated dataset as an estimate.
std::vector<Estimate> ground_truth_estimates(const std::filesystem::path& dataset_dir);

struct EvalConfig {
  /// Annotations less visible than this are not evaluated.
  double min_visibility = 0.1;
};

struct EvalResult {
  std::vector<ReportRow> rows;
  /// Evaluated annotations without a matching estimate.
  std::size_t missing = 0;
  /// Pooled over all rows; a missing estimate counts as a miss everywhere.
  RecallSummary recall;
};

/// BOP-style evaluation of estimates against a generated dataset. VSD uses the
/// stored scene depth; objects are treated as asymmetric.
EvalResult evaluate_dataset(const std::filesystem::path& dataset_dir, std::span<const Estimate> estimates,
                            const EvalConfig& cfg = {});

}  // namespace metric_align
