#include "metric_align/io.hpp"

#include "metric_align/error.hpp"

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>

namespace metric_align {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw Error(ErrorCode::kIoFailure, std::string("cannot open ") + path.string());
  return f;
}

// Rows are handed over as already-packed big-endian bytes.
void write_png(const fs::path& path, int width, int height, int bit_depth, int color_type,
               const std::vector<std::uint8_t>& bytes) {
  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIoFailure, "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIoFailure, "PNG write failed: " + path.string());
  }
  png_init_io(png, f.get());
  png_set_compression_level(png, 1);
  png_set_IHDR(png, info, png_uint_32(width), png_uint_32(height), bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = bytes.size() / std::size_t(height);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(bytes.data() + std::size_t(y) * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct RawPng {
  int width = 0;
  int height = 0;
  int bit_depth = 0;
  int channels = 0;
  std::vector<std::uint8_t> bytes;
};

RawPng read_png(const fs::path& path) {
  FilePtr f = open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw Error(ErrorCode::kFormatError, "not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::kIoFailure, "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::kFormatError, "corrupt PNG: " + path.string());
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color_type = png_get_color_type(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  RawPng out;
  out.width = int(png_get_image_width(png, info));
  out.height = int(png_get_image_height(png, info));
  out.bit_depth = png_get_bit_depth(png, info);
  out.channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  out.bytes.resize(stride * std::size_t(out.height));
  for (int y = 0; y < out.height; ++y) png_read_row(png, out.bytes.data() + std::size_t(y) * stride, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace

void write_png_gray8(const fs::path& path, const Image<std::uint8_t>& image) {
  write_png(path, image.width, image.height, 8, PNG_COLOR_TYPE_GRAY, image.data);
}

void write_png_gray16(const fs::path& path, const Image<std::uint16_t>& image) {
  std::vector<std::uint8_t> bytes(image.data.size() * 2);
  for (std::size_t i = 0; i < image.data.size(); ++i) {
    bytes[2 * i] = std::uint8_t(image.data[i] >> 8);
    bytes[2 * i + 1] = std::uint8_t(image.data[i] & 0xff);
  }
  write_png(path, image.width, image.height, 16, PNG_COLOR_TYPE_GRAY, bytes);
}

Image<std::uint8_t> read_png_gray8(const fs::path& path) {
  RawPng raw = read_png(path);
  if (raw.bit_depth != 8 || raw.channels != 1) {
    throw Error(ErrorCode::kFormatError, "expected 8-bit grayscale PNG: " + path.string());
  }
  Image<std::uint8_t> img(raw.width, raw.height);
  img.data = std::move(raw.bytes);
  return img;
}

Image<std::uint16_t> read_png_gray16(const fs::path& path) {
  RawPng raw = read_png(path);
  if (raw.bit_depth != 16 || raw.channels != 1) {
    throw Error(ErrorCode::kFormatError, "expected 16-bit grayscale PNG: " + path.string());
  }
  Image<std::uint16_t> img(raw.width, raw.height);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    img.data[i] = std::uint16_t((raw.bytes[2 * i] << 8) | raw.bytes[2 * i + 1]);
  }
  return img;
}

ColorImage read_png_rgb(const fs::path& path) {
  RawPng raw = read_png(path);
  if (raw.bit_depth != 8 || raw.channels != 3) {
    throw Error(ErrorCode::kFormatError, "expected 8-bit RGB PNG: " + path.string());
  }
  return {raw.width, raw.height, std::move(raw.bytes)};
}

void write_depth_png(const fs::path& path, const DepthMap& depth) {
  Image<std::uint16_t> img(depth.width, depth.height, 0);
  for (std::size_t i = 0; i < depth.data.size(); ++i) {
    const double units = std::round(depth.data[i] * kDepthPngUnitsPerMeter);
    if (units > 65535.0) throw Error(ErrorCode::kFormatError, "depth exceeds 16-bit PNG range");
    img.data[i] = std::uint16_t(units);
  }
  write_png_gray16(path, img);
}

DepthMap read_depth_png(const fs::path& path) {
  const Image<std::uint16_t> img = read_png_gray16(path);
  DepthMap depth(img.width, img.height, 0.0);
  for (std::size_t i = 0; i < img.data.size(); ++i) depth.data[i] = img.data[i] / kDepthPngUnitsPerMeter;
  return depth;
}

void write_mask_png(const fs::path& path, const Mask& mask) {
  Image<std::uint8_t> img(mask.width, mask.height, 0);
  for (std::size_t i = 0; i < mask.data.size(); ++i) img.data[i] = mask.data[i] ? 255 : 0;
  write_png_gray8(path, img);
}

Mask read_mask_png(const fs::path& path) {
  Mask m = read_png_gray8(path);
  for (auto& v : m.data) v = v >= 128 ? 1 : 0;
  return m;
}

json to_json(const RigidTransform& t) {
  json r = json::array();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) r.push_back(t.rotation()(i, j));
  }
  const Vec3& tr = t.translation();
  return {{"R", r}, {"t", {tr.x(), tr.y(), tr.z()}}};
}

RigidTransform rigid_transform_from_json(const json& j) {
  try {
    const auto& r = j.at("R");
    const auto& t = j.at("t");
    if (r.size() != 9 || t.size() != 3) throw Error(ErrorCode::kFormatError, "pose needs 9 rotation and 3 translation values");
    Mat3 rot;
    for (int i = 0; i < 9; ++i) rot(i / 3, i % 3) = r.at(std::size_t(i)).get<double>();
    return {rot, Vec3(t[0].get<double>(), t[1].get<double>(), t[2].get<double>())};
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("bad pose JSON: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kInvalidArgument) throw Error(ErrorCode::kFormatError, e.what());
    throw;
  }
}

json to_json(const CameraIntrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

CameraIntrinsics intrinsics_from_json(const json& j) {
  try {
    CameraIntrinsics k;
    k.fx = j.at("fx").get<double>();
    k.fy = j.at("fy").get<double>();
    k.cx = j.at("cx").get<double>();
    k.cy = j.at("cy").get<double>();
    k.width = j.at("width").get<int>();
    k.height = j.at("height").get<int>();
    k.validate();
    return k;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("bad intrinsics JSON: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::kFormatError, e.what());
  }
}

json to_json(const ScaledModelPose& p) { return {{"scale", p.scale()}, {"pose", to_json(p.pose())}}; }

ScaledModelPose scaled_pose_from_json(const json& j) {
  try {
    return {j.at("scale").get<double>(), rigid_transform_from_json(j.at("pose"))};
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("bad scaled pose JSON: ") + e.what());
  }
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormatError, path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::kIoFailure, "write failed for " + path.string());
}

Observation load_observation(const fs::path& dir) {
  for (const char* name : {"depth.png", "mask.png", "intrinsics.json"}) {
    if (!fs::exists(dir / name)) throw Error(ErrorCode::kIoFailure, "missing " + (dir / name).string());
  }
  Observation obs;
  obs.depth = read_depth_png(dir / "depth.png");
  obs.mask = read_mask_png(dir / "mask.png");
  obs.intrinsics = intrinsics_from_json(read_json(dir / "intrinsics.json"));
  if (fs::exists(dir / "rgb.png")) obs.color = read_png_rgb(dir / "rgb.png");
  if (obs.mask.width != obs.depth.width || obs.mask.height != obs.depth.height) {
    throw Error(ErrorCode::kFormatError, "mask and depth sizes differ in " + dir.string());
  }
  fill_depth_holes(obs);
  obs.validate();
  return obs;
}

void save_observation(const fs::path& dir, const Observation& obs) {
  fs::create_directories(dir);
  write_depth_png(dir / "depth.png", obs.depth);
  write_mask_png(dir / "mask.png", obs.mask);
  write_json(dir / "intrinsics.json", to_json(obs.intrinsics));
}

std::optional<ScaledModelPose> load_ground_truth(const fs::path& dir) {
  if (!fs::exists(dir / "gt.json")) return std::nullopt;
  return scaled_pose_from_json(read_json(dir / "gt.json"));
}

void save_ground_truth(const fs::path& dir, const ScaledModelPose& gt) { write_json(dir / "gt.json", to_json(gt)); }

namespace {
std::string frame_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu", i);
  return buf;
}
}  // namespace

void save_template_bundle(const fs::path& dir, std::span<const TemplateView> templates, const json& extra) {
  fs::create_directories(dir / "depth");
  fs::create_directories(dir / "mask");
  json views = json::array();
  for (std::size_t i = 0; i < templates.size(); ++i) {
    const TemplateView& t = templates[i];
    write_depth_png(dir / "depth" / (frame_name(i) + ".png"), t.depth);
    write_mask_png(dir / "mask" / (frame_name(i) + ".png"), t.mask);
    views.push_back({{"index", i}, {"camera_from_object", to_json(t.camera_from_object)}, {"model_scale", t.model_scale}});
  }
  json doc = extra;
  doc["intrinsics"] = templates.empty() ? json(nullptr) : to_json(templates.front().intrinsics);
  doc["views"] = views;
  write_json(dir / "templates.json", doc);
}

std::vector<TemplateView> load_template_bundle(const fs::path& dir) {
  const json doc = read_json(dir / "templates.json");
  std::vector<TemplateView> out;
  try {
    const CameraIntrinsics k = intrinsics_from_json(doc.at("intrinsics"));
    for (const json& v : doc.at("views")) {
      const auto i = v.at("index").get<std::size_t>();
      TemplateView t;
      t.camera_from_object = rigid_transform_from_json(v.at("camera_from_object"));
      t.model_scale = v.value("model_scale", 1.0);
      t.intrinsics = k;
      t.depth = read_depth_png(dir / "depth" / (frame_name(i) + ".png"));
      t.mask = read_mask_png(dir / "mask" / (frame_name(i) + ".png"));
      // Quantization can zero a few boundary depths; keep mask and depth consistent.
      for (std::size_t p = 0; p < t.mask.data.size(); ++p) {
        if (t.depth.data[p] <= 0.0) t.mask.data[p] = 0;
      }
      out.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("bad templates.json: ") + e.what());
  }
  return out;
}

}  // namespace metric_align
