#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "dualcv/tensor.hpp"

namespace dualcv::io {

struct StereoSample {
  Tensor<float> left;   // [3, H, W] in [0, 1]
  Tensor<float> right;  // [3, H, W] in [0, 1]
  Tensor<float> d_gt;   // [H, W] pixels
  Tensor<float> valid;  // [H, W] in {0, 1}

  std::size_t height() const { return d_gt.extent(0); }
  std::size_t width() const { return d_gt.extent(1); }
};

struct SynthOptions {
  /// Disparities are drawn below this fraction of dmax before clipping.
  double max_fraction = 0.8;
  std::size_t max_objects = 3;
  std::size_t max_bumps = 2;
  /// Produce an all-zero disparity field.
  bool zero_disparity = false;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Separable box blur (radius r) of a [rows, cols] plane, edges clamped.
inline std::vector<float> blur(const std::vector<float>& src, std::size_t rows, std::size_t cols, int r) {
  if (r <= 0) return src;
  auto pass = [&](const std::vector<float>& in, bool horizontal) {
    std::vector<float> out(in.size());
    for (std::size_t y = 0; y < rows; ++y)
      for (std::size_t x = 0; x < cols; ++x) {
        double s = 0;
        for (int k = -r; k <= r; ++k) {
          const long long yy = horizontal ? static_cast<long long>(y)
                                          : std::clamp<long long>(static_cast<long long>(y) + k, 0, rows - 1);
          const long long xx = horizontal ? std::clamp<long long>(static_cast<long long>(x) + k, 0, cols - 1)
                                          : static_cast<long long>(x);
          s += in[static_cast<std::size_t>(yy) * cols + static_cast<std::size_t>(xx)];
        }
        out[y * cols + x] = static_cast<float>(s / (2 * r + 1));
      }
    return out;
  };
  return pass(pass(src, true), false);
}

}  // namespace detail

/// Random piecewise-smooth stereo pair with exact ground truth.
///
/// The right view is a multi-scale random texture sampled on the pixel grid
/// (with a margin of dmax columns to the left). The texture is piecewise
/// linear between grid columns, so the left view obtained by inverse warping,
/// left(x,y) = texture(x - d(x,y), y), equals the linear interpolation of the
/// right view at x - d. Left pixels that fall outside the right frame or
/// behind a nearer surface are marked invalid.
inline StereoSample synth_sample(std::uint64_t seed, std::size_t H, std::size_t W, std::size_t dmax,
                                 const SynthOptions& opt = {}) {
  std::mt19937_64 rng(seed);
  auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  const double dtop = std::max(1.0, opt.max_fraction * static_cast<double>(dmax));

  // Disparity field: background plane, slanted foreground ellipses, smooth bumps.
  std::vector<double> disp(H * W);
  if (!opt.zero_disparity) {
    const double cx = W / 2.0, cy = H / 2.0;
    const double base = uni(0.1, 0.45) * dtop;
    const double gx = uni(-0.05, 0.05), gy = uni(-0.08, 0.08);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) disp[y * W + x] = base + gx * (x - cx) + gy * (y - cy);
    const auto objects = static_cast<std::size_t>(uni(1, static_cast<double>(opt.max_objects) + 1));
    for (std::size_t o = 0; o < objects; ++o) {
      const double ox = uni(0, W), oy = uni(0, H), rx = uni(0.08, 0.3) * W, ry = uni(0.15, 0.45) * H;
      const double th = uni(0, 3.14159265358979), c = std::cos(th), s = std::sin(th);
      const double level = uni(0.45, 1.0) * dtop, sx = uni(-0.05, 0.05), sy = uni(-0.05, 0.05);
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const double dx = x - ox, dy = y - oy;
          const double u = (c * dx + s * dy) / rx, v = (-s * dx + c * dy) / ry;
          if (u * u + v * v <= 1.0) disp[y * W + x] = level + sx * dx + sy * dy;
        }
    }
    const auto bumps = static_cast<std::size_t>(uni(0, static_cast<double>(opt.max_bumps) + 1));
    for (std::size_t k = 0; k < bumps; ++k) {
      const double bx = uni(0, W), by = uni(0, H), rx = uni(0.1, 0.25) * W, ry = uni(0.1, 0.3) * H;
      const double amp = uni(-0.15, 0.15) * dtop;
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const double u = (x - bx) / rx, v = (y - by) / ry;
          disp[y * W + x] += amp * std::exp(-0.5 * (u * u + v * v) * 4.0);
        }
    }
    for (auto& d : disp) d = std::clamp(d, 0.0, static_cast<double>(dmax) - 1.0);
  }

  // Texture over columns [-dmax, W).
  const std::size_t margin = dmax, TW = W + margin;
  std::vector<std::vector<float>> tex(3);
  std::normal_distribution<float> gauss(0.f, 1.f);
  for (auto& plane : tex) {
    plane.assign(H * TW, 0.f);
    const double weights[3] = {0.5, 0.35, 0.25};
    const int radii[3] = {0, 1, 3};
    for (int s = 0; s < 3; ++s) {
      std::vector<float> noise(H * TW);
      for (auto& v : noise) v = gauss(rng);
      auto b = detail::blur(noise, H, TW, radii[s]);
      const double norm = radii[s] ? std::sqrt(2.0 * radii[s] + 1.0) : 1.0;  // keep scales comparable
      for (std::size_t i = 0; i < b.size(); ++i) plane[i] += static_cast<float>(weights[s] * norm * b[i]);
    }
    const float offset = static_cast<float>(uni(0.4, 0.6)), gain = static_cast<float>(uni(0.12, 0.2));
    for (auto& v : plane) v = std::clamp(offset + gain * v, 0.0f, 1.0f);
  }
  auto texel = [&](std::size_t c, std::size_t y, double u) {
    // u is a right-view column; texture column = u + margin.
    const double t = std::clamp(u + static_cast<double>(margin), 0.0, static_cast<double>(TW - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(t));
    const std::size_t i1 = std::min(i0 + 1, TW - 1);
    const double a = t - static_cast<double>(i0);
    const float* row = tex[c].data() + y * TW;
    return static_cast<float>((1 - a) * row[i0] + a * row[i1]);
  };

  StereoSample s{Tensor<float>(Shape{3, H, W}), Tensor<float>(Shape{3, H, W}), Tensor<float>(Shape{H, W}),
                 Tensor<float>(Shape{H, W})};
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double d = static_cast<float>(disp[y * W + x]);
        s.right.at(c, y, x) = tex[c][y * TW + x + margin];
        s.left.at(c, y, x) = texel(c, y, static_cast<double>(x) - d);
      }
  for (std::size_t y = 0; y < H; ++y) {
    double suffix_min = std::numeric_limits<double>::infinity();
    for (std::size_t x = W; x-- > 0;) {
      const float d = static_cast<float>(disp[y * W + x]);
      s.d_gt.at(y, x) = d;
      const double xr = static_cast<double>(x) - d;
      const bool in_frame = xr >= 0.0;
      const bool occluded = suffix_min < xr;
      s.valid.at(y, x) = (in_frame && !occluded) ? 1.0f : 0.0f;
      suffix_min = std::min(suffix_min, xr);
    }
  }
  return s;
}

/// n samples; sample i uses a seed derived from (seed, i).
inline std::vector<StereoSample> synth_generate(std::uint64_t seed, std::size_t H, std::size_t W, std::size_t dmax,
                                                std::size_t n, const SynthOptions& opt = {}) {
  if (H % 32 || W % 32) fail_shape("synth_generate: extents ", H, "x", W, " must be multiples of 32");
  if (dmax == 0 || dmax % 4) fail_shape("synth_generate: dmax ", dmax, " must be a positive multiple of 4");
  std::vector<StereoSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(synth_sample(detail::splitmix64(seed ^ detail::splitmix64(i)), H, W, dmax, opt));
  return out;
}

/// Linear interpolation of one channel row at a real column; nullopt outside [0, W-1].
inline std::optional<float> sample_row(const Tensor<float>& img, std::size_t c, std::size_t y, double u) {
  const std::size_t W = img.extent(2);
  if (u < 0.0 || u > static_cast<double>(W - 1)) return std::nullopt;
  const auto i0 = static_cast<std::size_t>(std::floor(u));
  const std::size_t i1 = std::min(i0 + 1, W - 1);
  const double a = u - static_cast<double>(i0);
  return static_cast<float>((1 - a) * img.at(c, y, i0) + a * img.at(c, y, i1));
}

}  // namespace dualcv::io
