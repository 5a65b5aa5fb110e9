#pragma once

#include "metric_align/geom.hpp"
#include "metric_align/image.hpp"
#include "metric_align/raster.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace metric_align {

/// Depth PNG unit: 0.1 mm (BOP convention).
inline constexpr double kDepthPngUnitsPerMeter = 10000.0;

void write_png_gray8(const std::filesystem::path& path, const Image<std::uint8_t>& image);
void write_png_gray16(const std::filesystem::path& path, const Image<std::uint16_t>& image);
Image<std::uint8_t> read_png_gray8(const std::filesystem::path& path);
Image<std::uint16_t> read_png_gray16(const std::filesystem::path& path);
ColorImage read_png_rgb(const std::filesystem::path& path);

/// 16-bit depth in 0.1 mm units; depths beyond the representable range are
/// rejected with kFormatError.
void write_depth_png(const std::filesystem::path& path, const DepthMap& depth);
DepthMap read_depth_png(const std::filesystem::path& path);
/// 255 = covered.
void write_mask_png(const std::filesystem::path& path, const Mask& mask);
Mask read_mask_png(const std::filesystem::path& path);

nlohmann::json to_json(const RigidTransform& t);
RigidTransform rigid_transform_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CameraIntrinsics& k);
CameraIntrinsics intrinsics_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ScaledModelPose& p);
ScaledModelPose scaled_pose_from_json(const nlohmann::json& j);

nlohmann::json read_json(const std::filesystem::path& path);
/// Pretty-printed with a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

/// Observation directory: depth.png, mask.png, intrinsics.json and an
/// optional rgb.png. Holes inside the mask are filled on load.
Observation load_observation(const std::filesystem::path& dir);
void save_observation(const std::filesystem::path& dir, const Observation& obs);

/// Optional ground-truth sidecar (gt.json: {"scale", "pose"}).
std::optional<ScaledModelPose> load_ground_truth(const std::filesystem::path& dir);
void save_ground_truth(const std::filesystem::path& dir, const ScaledModelPose& gt);

/// Template bundle: templates.json plus depth/NNNNNN.png and mask/NNNNNN.png.
void save_template_bundle(const std::filesystem::path& dir, std::span<const TemplateView> templates,
                          const nlohmann::json& extra = nlohmann::json::object());
std::vector<TemplateView> load_template_bundle(const std::filesystem::path& dir);

}  // namespace metric_align
