#pragma once

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualcv/tensor.hpp"

namespace dualcv::io {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PfmImage {
  Tensor<float> data;  // [H, W], top row first
  float scale = 1.0f;  // magnitude of the header scale
};

namespace detail {

inline std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

inline std::string next_token(std::istream& in, const std::string& what) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF && std::isspace(c)) {
  }
  if (c == EOF) throw ParseError("PFM: unexpected end of header reading " + what);
  tok.push_back(static_cast<char>(c));
  while ((c = in.peek()) != EOF && !std::isspace(c)) tok.push_back(static_cast<char>(in.get()));
  return tok;
}

}  // namespace detail

/// Single-channel PFM ("Pf"). Rows are stored bottom-up; a negative scale
/// marks little-endian floats.
inline PfmImage read_pfm(std::istream& in) {
  const auto magic = detail::next_token(in, "magic");
  if (magic == "PF") throw ParseError("PFM: colour (PF) files are not single-channel disparity maps");
  if (magic != "Pf") throw ParseError("PFM: bad magic '" + magic + "'");
  std::size_t w = 0, h = 0;
  float scale = 0;
  try {
    w = std::stoul(detail::next_token(in, "width"));
    h = std::stoul(detail::next_token(in, "height"));
    scale = std::stof(detail::next_token(in, "scale"));
  } catch (const std::logic_error&) {
    throw ParseError("PFM: malformed header dimensions or scale");
  }
  if (w == 0 || h == 0) throw ParseError("PFM: zero extent");
  if (scale == 0 || !std::isfinite(scale)) throw ParseError("PFM: scale must be finite and nonzero");
  if (!std::isspace(in.get())) throw ParseError("PFM: missing separator after scale");
  const bool file_le = scale < 0;
  const bool host_le = std::endian::native == std::endian::little;
  Tensor<float> t(Shape{h, w});
  std::vector<std::uint32_t> row(w);
  for (std::size_t r = 0; r < h; ++r) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(w * 4));
    if (in.gcount() != static_cast<std::streamsize>(w * 4))
      throw ParseError("PFM: truncated payload at row " + std::to_string(r) + " of " + std::to_string(h));
    float* dst = t.data() + (h - 1 - r) * w;
    for (std::size_t x = 0; x < w; ++x) {
      std::uint32_t v = row[x];
      if (file_le != host_le) v = detail::byteswap32(v);
      std::memcpy(dst + x, &v, 4);
    }
  }
  return {std::move(t), std::abs(scale)};
}

inline PfmImage read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("PFM: cannot open " + path.string());
  try {
    return read_pfm(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

/// Writes little-endian (negative scale) single-channel PFM from an [H, W] map.
inline void write_pfm(std::ostream& out, const Tensor<float>& t, float scale = 1.0f) {
  if (t.dim() != 2) fail_shape("write_pfm: expected [H,W], got ", to_string(t.shape()));
  const std::size_t h = t.extent(0), w = t.extent(1);
  out << "Pf\n" << w << ' ' << h << '\n' << -std::abs(scale) << '\n';
  const bool host_le = std::endian::native == std::endian::little;
  std::vector<std::uint32_t> row(w);
  for (std::size_t r = 0; r < h; ++r) {
    const float* src = t.data() + (h - 1 - r) * w;
    for (std::size_t x = 0; x < w; ++x) {
      std::uint32_t v;
      std::memcpy(&v, src + x, 4);
      row[x] = host_le ? v : detail::byteswap32(v);
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(w * 4));
  }
  if (!out) throw std::runtime_error("PFM: write failed");
}

inline void write_pfm(const std::filesystem::path& path, const Tensor<float>& t, float scale = 1.0f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("PFM: cannot create " + path.string());
  write_pfm(out, t, scale);
}

}  // namespace dualcv::io
