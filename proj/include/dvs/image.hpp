#pragma once

#include <png.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dvs {

/// 8-bit interleaved image, row-major from the top-left pixel; 3 channels
/// (RGB) or 1 (grayscale).
struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<unsigned char> pixels;

  bool operator==(const ImageU8&) const = default;
};

inline unsigned char quantize_channel(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// 3 x (W*H) column-per-pixel float image (pixel index v*W + u) to RGB8.
inline ImageU8 quantize_image(const Eigen::MatrixXd& img, int width, int height) {
  if (img.rows() != 3 || img.cols() != static_cast<long>(width) * height)
    throw std::invalid_argument("quantize_image: expected 3 x width*height");
  ImageU8 out{width, height, 3, {}};
  out.pixels.resize(static_cast<size_t>(width) * height * 3);
  for (long pix = 0; pix < img.cols(); ++pix)
    for (int c = 0; c < 3; ++c) out.pixels[pix * 3 + c] = quantize_channel(img(c, pix));
  return out;
}

inline Eigen::MatrixXd image_to_matrix(const ImageU8& img) {
  if (img.channels != 3) throw std::invalid_argument("image_to_matrix: expected RGB");
  Eigen::MatrixXd out(3, static_cast<long>(img.width) * img.height);
  for (long pix = 0; pix < out.cols(); ++pix)
    for (int c = 0; c < 3; ++c) out(c, pix) = img.pixels[pix * 3 + c] / 255.0;
  return out;
}

/// {0,1} mask to a black/white grayscale image.
inline ImageU8 mask_to_u8(const Eigen::RowVectorXd& mask, int width, int height) {
  if (mask.cols() != static_cast<long>(width) * height)
    throw std::invalid_argument("mask_to_u8: size mismatch");
  ImageU8 out{width, height, 1, {}};
  out.pixels.resize(static_cast<size_t>(width) * height);
  for (long pix = 0; pix < mask.cols(); ++pix) out.pixels[pix] = mask(pix) >= 0.5 ? 255 : 0;
  return out;
}

inline Eigen::RowVectorXd mask_from_u8(const ImageU8& img) {
  if (img.channels != 1) throw std::invalid_argument("mask_from_u8: expected grayscale");
  Eigen::RowVectorXd mask(static_cast<long>(img.width) * img.height);
  for (long pix = 0; pix < mask.cols(); ++pix) mask(pix) = img.pixels[pix] >= 128 ? 1.0 : 0.0;
  return mask;
}

/// Linear map [near, far] -> [0, 255], clamped; the range is documented in
/// the file name (see depth_png_name).
inline ImageU8 depth_to_u8(const Eigen::RowVectorXd& depth, int width, int height, double near,
                           double far) {
  if (depth.cols() != static_cast<long>(width) * height)
    throw std::invalid_argument("depth_to_u8: size mismatch");
  if (!(far > near)) throw std::invalid_argument("depth_to_u8: far must exceed near");
  ImageU8 out{width, height, 1, {}};
  out.pixels.resize(static_cast<size_t>(width) * height);
  for (long pix = 0; pix < depth.cols(); ++pix)
    out.pixels[pix] = quantize_channel((depth(pix) - near) / (far - near));
  return out;
}

/// "<stem>_depth_n<near>_f<far>.png" so the normalization window travels
/// with the file.
inline std::string depth_png_name(const std::string& stem, double near, double far) {
  std::ostringstream name;
  name << stem << "_depth_n" << near << "_f" << far << ".png";
  return name.str();
}

// ---------------------------------------------------------------------------
// Optical-flow color wheel
// ---------------------------------------------------------------------------

namespace detail {

/// Standard 55-entry flow color wheel (RY/YG/GC/CB/BM/MR arcs).
inline const std::vector<Eigen::Vector3d>& flow_color_wheel() {
  static const std::vector<Eigen::Vector3d> wheel = [] {
    const int arcs[6] = {15, 6, 4, 11, 13, 6};
    const Eigen::Vector3d anchors[7] = {{1, 0, 0}, {1, 1, 0}, {0, 1, 0}, {0, 1, 1},
                                        {0, 0, 1}, {1, 0, 1}, {1, 0, 0}};
    std::vector<Eigen::Vector3d> w;
    for (int a = 0; a < 6; ++a)
      for (int i = 0; i < arcs[a]; ++i)
        w.push_back(anchors[a] + (anchors[a + 1] - anchors[a]) * (static_cast<double>(i) / arcs[a]));
    return w;
  }();
  return wheel;
}

}  // namespace detail

/// RGB for a flow vector already normalized to magnitude <= 1. Zero flow is
/// the wheel center (white); hue encodes direction, saturation magnitude.
inline Eigen::Vector3d flow_wheel_color(double u, double v) {
  const auto& wheel = detail::flow_color_wheel();
  const int ncols = static_cast<int>(wheel.size());
  const double rad = std::min(1.0, std::sqrt(u * u + v * v));
  const double angle = std::atan2(-v, -u) / M_PI;  // [-1, 1]
  const double fk = (angle + 1.0) / 2.0 * (ncols - 1);
  const int k0 = static_cast<int>(fk) % ncols;
  const int k1 = (k0 + 1) % ncols;
  const double f = fk - std::floor(fk);
  const Eigen::Vector3d base = (1.0 - f) * wheel[k0] + f * wheel[k1];
  return Eigen::Vector3d::Ones() - rad * (Eigen::Vector3d::Ones() - base);
}

/// Renders a 2 x (W*H) pixel-space flow field with the color wheel,
/// normalized by the largest masked magnitude; pixels outside the mask are
/// black.
inline ImageU8 flow_to_u8(const Eigen::MatrixXd& flow2d, const Eigen::RowVectorXd& mask,
                          int width, int height) {
  if (flow2d.rows() != 2 || flow2d.cols() != static_cast<long>(width) * height)
    throw std::invalid_argument("flow_to_u8: expected 2 x width*height");
  if (mask.cols() != flow2d.cols()) throw std::invalid_argument("flow_to_u8: mask mismatch");
  double max_mag = 0.0;
  for (long pix = 0; pix < flow2d.cols(); ++pix)
    if (mask(pix) != 0.0) max_mag = std::max(max_mag, flow2d.col(pix).norm());
  const double scale = 1.0 / std::max(max_mag, 1e-9);

  ImageU8 out{width, height, 3, {}};
  out.pixels.assign(static_cast<size_t>(width) * height * 3, 0);
  for (long pix = 0; pix < flow2d.cols(); ++pix) {
    if (mask(pix) == 0.0) continue;
    const Eigen::Vector3d rgb =
        flow_wheel_color(flow2d(0, pix) * scale, flow2d(1, pix) * scale);
    for (int c = 0; c < 3; ++c) out.pixels[pix * 3 + c] = quantize_channel(rgb(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// PNG file IO
// ---------------------------------------------------------------------------

inline void write_png(const std::string& path, const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("write_png: only grayscale and RGB supported");
  if (img.pixels.size() != static_cast<size_t>(img.width) * img.height * img.channels)
    throw std::invalid_argument("write_png: pixel buffer size mismatch");
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr))
    throw std::runtime_error(std::string("write_png: ") + image.message);
}

inline ImageU8 read_png(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw std::runtime_error(std::string("read_png: ") + image.message);
  const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  ImageU8 out{static_cast<int>(image.width), static_cast<int>(image.height), gray ? 1 : 3, {}};
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw std::runtime_error(std::string("read_png: ") + image.message);
  }
  return out;
}

}  // namespace dvs
