#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "dualcv/io/pfm.hpp"
#include "dualcv/io/png.hpp"
#include "dualcv/io/synth.hpp"

namespace dualcv::io {

/// Directory layout: <name>_left.png, <name>_right.png and either
/// <name>_disp.pfm (non-finite = invalid) or <name>_disp.png (16-bit, 0 = invalid).

inline void write_rgb16(const std::filesystem::path& path, const Tensor<float>& rgb) {
  if (rgb.dim() != 3 || rgb.extent(0) != 3) fail_shape("write_rgb16: expected [3,H,W]");
  const std::size_t H = rgb.extent(1), W = rgb.extent(2), HW = H * W;
  PngImage img{W, H, 3, 16, std::vector<std::uint16_t>(3 * HW)};
  for (std::size_t p = 0; p < HW; ++p)
    for (std::size_t c = 0; c < 3; ++c)
      img.samples[p * 3 + c] =
          static_cast<std::uint16_t>(std::lround(std::clamp(rgb[c * HW + p], 0.0f, 1.0f) * 65535.0f));
  write_png(path, img);
}

/// Disparity from PFM: finite, nonnegative values are measurements.
inline DisparityMap read_disp_pfm(const std::filesystem::path& path) {
  auto pfm = read_pfm(path);
  DisparityMap m{pfm.data, Tensor<float>(pfm.data.shape())};
  for (std::size_t i = 0; i < m.disparity.size(); ++i) {
    const bool ok = std::isfinite(m.disparity[i]) && m.disparity[i] >= 0.0f;
    m.valid[i] = ok ? 1.0f : 0.0f;
    if (!ok) m.disparity[i] = 0.0f;
  }
  return m;
}

inline DisparityMap read_disparity(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".pfm") return read_disp_pfm(path);
  if (ext == ".png") return read_disp_png16(path);
  throw ParseError("unsupported disparity file " + path.string() + " (expected .pfm or .png)");
}

inline void save_sample(const std::filesystem::path& dir, const std::string& name, const StereoSample& s) {
  std::filesystem::create_directories(dir);
  write_rgb16(dir / (name + "_left.png"), s.left);
  write_rgb16(dir / (name + "_right.png"), s.right);
  Tensor<float> d = s.d_gt;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (s.valid[i] == 0.0f) d[i] = std::numeric_limits<float>::infinity();
  write_pfm(dir / (name + "_disp.pfm"), d);
}

inline StereoSample load_sample(const std::filesystem::path& left, const std::filesystem::path& right,
                                const std::filesystem::path& disp) {
  StereoSample s{read_rgb(left), read_rgb(right), {}, {}};
  auto m = read_disparity(disp);
  s.d_gt = std::move(m.disparity);
  s.valid = std::move(m.valid);
  if (s.left.shape() != s.right.shape())
    fail_shape("stereo pair ", left.string(), " / ", right.string(), " differ in extent: ", to_string(s.left.shape()),
               " vs ", to_string(s.right.shape()));
  if (s.d_gt.shape() != Shape{s.left.extent(1), s.left.extent(2)})
    fail_shape("disparity ", disp.string(), " has extent ", to_string(s.d_gt.shape()), ", images are ",
               to_string(s.left.shape()));
  return s;
}

/// Every <name>_left.png in `dir` (sorted by name) with its partner files.
inline std::vector<StereoSample> load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ParseError("dataset directory not found: " + dir.string());
  std::vector<std::string> names;
  const std::string suffix = "_left.png";
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto f = e.path().filename().string();
    if (f.size() > suffix.size() && f.compare(f.size() - suffix.size(), suffix.size(), suffix) == 0)
      names.push_back(f.substr(0, f.size() - suffix.size()));
  }
  std::sort(names.begin(), names.end());
  std::vector<StereoSample> out;
  for (const auto& n : names) {
    auto disp = dir / (n + "_disp.pfm");
    if (!std::filesystem::exists(disp)) disp = dir / (n + "_disp.png");
    if (!std::filesystem::exists(disp)) throw ParseError("no disparity file for sample '" + n + "' in " + dir.string());
    out.push_back(load_sample(dir / (n + "_left.png"), dir / (n + "_right.png"), disp));
  }
  return out;
}

}  // namespace dualcv::io
