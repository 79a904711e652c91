#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dualcv/io/pfm.hpp"

namespace dualcv::io {

/// Decoded PNG samples, row-major interleaved, 8- or 16-bit values widened.
struct PngImage {
  std::size_t width = 0, height = 0, channels = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> samples;
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

inline PngImage read_png(const std::filesystem::path& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw ParseError("PNG: cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw ParseError("PNG: " + path.string() + " is not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("PNG: out of memory");
  }
  PngImage img;
  std::vector<png_bytep> rows;
  std::vector<png_byte> raw;
  volatile bool failed = false;
  if (setjmp(png_jmpbuf(png))) {
    failed = true;
  } else {
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    img.bit_depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && img.bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.channels = png_get_channels(png, info);
    img.bit_depth = png_get_bit_depth(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    raw.resize(stride * img.height);
    rows.resize(img.height);
    for (std::size_t y = 0; y < img.height; ++y) rows[y] = raw.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (failed) throw ParseError("PNG: decode failed for " + path.string());
  const std::size_t n = img.width * img.height * img.channels;
  img.samples.resize(n);
  // 16-bit PNG samples are big-endian.
  for (std::size_t i = 0; i < n; ++i)
    img.samples[i] = img.bit_depth == 16 ? static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]) : raw[i];
  return img;
}

inline void write_png(const std::filesystem::path& path, const PngImage& img) {
  if (img.bit_depth != 8 && img.bit_depth != 16) throw std::invalid_argument("PNG: bit depth must be 8 or 16");
  if (img.samples.size() != img.width * img.height * img.channels)
    throw std::invalid_argument("PNG: sample count does not match extents");
  int color = 0;
  switch (img.channels) {
    case 1: color = PNG_COLOR_TYPE_GRAY; break;
    case 3: color = PNG_COLOR_TYPE_RGB; break;
    case 4: color = PNG_COLOR_TYPE_RGB_ALPHA; break;
    default: throw std::invalid_argument("PNG: unsupported channel count");
  }
  const std::size_t bps = img.bit_depth / 8, stride = img.width * img.channels * bps;
  std::vector<png_byte> raw(stride * img.height);
  for (std::size_t i = 0; i < img.samples.size(); ++i) {
    if (bps == 2) {
      raw[2 * i] = static_cast<png_byte>(img.samples[i] >> 8);
      raw[2 * i + 1] = static_cast<png_byte>(img.samples[i] & 0xff);
    } else {
      raw[i] = static_cast<png_byte>(std::min<std::uint16_t>(img.samples[i], 255));
    }
  }
  std::vector<png_bytep> rows(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = raw.data() + y * stride;

  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("PNG: cannot create " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("PNG: out of memory");
  }
  volatile bool failed = false;
  if (setjmp(png_jmpbuf(png))) {
    failed = true;
  } else {
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), img.bit_depth,
                 color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
  }
  png_destroy_write_struct(&png, &info);
  if (failed) throw std::runtime_error("PNG: encode failed for " + path.string());
}

struct DisparityMap {
  Tensor<float> disparity;  // [H, W] pixels
  Tensor<float> valid;      // [H, W] in {0, 1}
};

/// 16-bit grayscale disparity: value / 256 pixels, 0 = no measurement.
inline DisparityMap read_disp_png16(const std::filesystem::path& path) {
  auto img = read_png(path);
  if (img.bit_depth != 16)
    throw ParseError("disparity PNG " + path.string() + " has bit depth " + std::to_string(img.bit_depth) +
                     ", expected 16");
  if (img.channels != 1) throw ParseError("disparity PNG " + path.string() + " is not single-channel");
  DisparityMap m{Tensor<float>(Shape{img.height, img.width}), Tensor<float>(Shape{img.height, img.width})};
  for (std::size_t i = 0; i < img.samples.size(); ++i) {
    m.disparity[i] = static_cast<float>(img.samples[i]) / 256.0f;
    m.valid[i] = img.samples[i] ? 1.0f : 0.0f;
  }
  return m;
}

inline void write_disp_png16(const std::filesystem::path& path, const Tensor<float>& disparity,
                             const Tensor<float>& valid) {
  disparity.require_same_shape(valid, "write_disp_png16");
  if (disparity.dim() != 2) fail_shape("write_disp_png16: expected [H,W]");
  PngImage img{disparity.extent(1), disparity.extent(0), 1, 16, std::vector<std::uint16_t>(disparity.size())};
  for (std::size_t i = 0; i < disparity.size(); ++i) {
    if (valid[i] == 0.0f) continue;
    const double v = std::round(static_cast<double>(disparity[i]) * 256.0);
    img.samples[i] = static_cast<std::uint16_t>(std::clamp(v, 1.0, 65535.0));
  }
  write_png(path, img);
}

/// [3, H, W] in [0, 1] from an 8/16-bit gray or RGB(A) PNG.
inline Tensor<float> read_rgb(const std::filesystem::path& path) {
  auto img = read_png(path);
  const float maxv = img.bit_depth == 16 ? 65535.0f : 255.0f;
  Tensor<float> t(Shape{3, img.height, img.width});
  const std::size_t HW = img.width * img.height;
  for (std::size_t p = 0; p < HW; ++p)
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t src = img.channels >= 3 ? c : 0;
      t[c * HW + p] = static_cast<float>(img.samples[p * img.channels + src]) / maxv;
    }
  return t;
}

inline void write_rgb8(const std::filesystem::path& path, const Tensor<float>& rgb) {
  if (rgb.dim() != 3 || rgb.extent(0) != 3) fail_shape("write_rgb8: expected [3,H,W]");
  const std::size_t H = rgb.extent(1), W = rgb.extent(2), HW = H * W;
  PngImage img{W, H, 3, 8, std::vector<std::uint16_t>(3 * HW)};
  for (std::size_t p = 0; p < HW; ++p)
    for (std::size_t c = 0; c < 3; ++c)
      img.samples[p * 3 + c] =
          static_cast<std::uint16_t>(std::lround(std::clamp(rgb[c * HW + p], 0.0f, 1.0f) * 255.0f));
  write_png(path, img);
}

/// Grayscale visualisation scaled so that `max_value` maps to 255.
inline void write_gray8(const std::filesystem::path& path, const Tensor<float>& map, float max_value) {
  if (map.dim() != 2) fail_shape("write_gray8: expected [H,W]");
  PngImage img{map.extent(1), map.extent(0), 1, 8, std::vector<std::uint16_t>(map.size())};
  const float k = max_value > 0 ? 255.0f / max_value : 0.0f;
  for (std::size_t i = 0; i < map.size(); ++i)
    img.samples[i] = static_cast<std::uint16_t>(std::lround(std::clamp(map[i] * k, 0.0f, 255.0f)));
  write_png(path, img);
}

}  // namespace dualcv::io
