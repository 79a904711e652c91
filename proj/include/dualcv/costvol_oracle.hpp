#pragma once

#include <cmath>

#include "dualcv/costvol.hpp"

namespace dualcv {

/// Literal nested-loop evaluation of each matching cost on plain tensors.
/// Reference for the builders; shares no code with them.
template <class T>
Tensor<T> cost_volume_oracle(VolumeKind kind, const Tensor<T>& fl, const Tensor<T>& fr, std::size_t groups,
                             std::size_t disparities) {
  const auto& s = fl.shape();
  if (s.size() != 4 || fr.shape() != s) fail_shape("cost_volume_oracle: features must be equal [B,C,H,W]");
  const std::size_t B = s[0], Nc = s[1], H = s[2], W = s[3], D = disparities;
  const std::size_t Cv = volume_channels(kind, groups);
  if ((kind == VolumeKind::gwc_dot || kind == VolumeKind::gwc_sub) && (groups == 0 || Nc % groups))
    fail_shape("cost_volume_oracle: channels not divisible by groups");
  Tensor<T> out(Shape{B, Cv, D, H, W});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          if (x < d) continue;  // out of frame: stays 0
          const std::size_t xr = x - d;
          switch (kind) {
            case VolumeKind::gwc_dot:
            case VolumeKind::gwc_sub: {
              const std::size_t per = Nc / groups;
              for (std::size_t g = 0; g < groups; ++g) {
                double acc = 0;
                for (std::size_t k = 0; k < per; ++k) {
                  const std::size_t c = g * per + k;
                  const double a = fl.at(b, c, y, x), r = fr.at(b, c, y, xr);
                  acc += kind == VolumeKind::gwc_dot ? a * r : (a - r) * (a - r);
                }
                out.at(b, g, d, y, x) = static_cast<T>(static_cast<double>(groups) / static_cast<double>(Nc) * acc);
              }
              break;
            }
            case VolumeKind::norm_corr: {
              double dot = 0, na = 0, nb = 0;
              for (std::size_t c = 0; c < Nc; ++c) {
                const double a = fl.at(b, c, y, x), r = fr.at(b, c, y, xr);
                dot += a * r;
                na += a * a;
                nb += r * r;
              }
              out.at(b, 0, d, y, x) = static_cast<T>(dot / std::max(std::sqrt(na) * std::sqrt(nb), 1e-9));
              break;
            }
            case VolumeKind::concat:
              for (std::size_t c = 0; c < Nc; ++c) {
                out.at(b, c, d, y, x) = fl.at(b, c, y, x);
                out.at(b, Nc + c, d, y, x) = fr.at(b, c, y, xr);
              }
              break;
          }
        }
  return out;
}

}  // namespace dualcv
