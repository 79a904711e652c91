#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "dualcv/nn/params.hpp"
#include "dualcv/ops/softmax.hpp"

namespace dualcv {

inline constexpr std::size_t kUpsampleFactor = 4;
inline constexpr std::size_t kNeighbours = 9;

/// Soft regression over the k largest costs per pixel.
/// agg [B,1,D,H,W] -> d0 [B,H,W] in disparity-index units. Ties prefer the
/// smaller index.
template <class T>
Var<T> topk_regress(const Var<T>& agg, std::size_t k = 2) {
  const auto& s = agg.shape();
  if (s.size() != 5 || s[1] != 1) fail_shape("topk_regress: expected [B,1,D,H,W], got ", to_string(s));
  const std::size_t B = s[0], D = s[2], H = s[3], W = s[4], HW = H * W;
  if (k < 1 || k > D) fail_shape("topk_regress: k=", k, " must lie in [1, ", D, "]");
  Tensor<T> d0(Shape{B, H, W});
  // Per pixel: selected indices and their softmax weights.
  std::vector<std::uint32_t> sel(B * HW * k);
  std::vector<T> wts(B * HW * k);
  std::vector<std::uint32_t> order(D);
  const T* v = agg.value().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t p = 0; p < HW; ++p) {
      const T* col = v + b * D * HW + p;
      std::iota(order.begin(), order.end(), 0u);
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                        [&](std::uint32_t i, std::uint32_t j) {
                          const T a = col[i * HW], c = col[j * HW];
                          return a > c || (a == c && i < j);
                        });
      const std::size_t base = (b * HW + p) * k;
      T m = col[order[0] * HW];
      T z{0};
      for (std::size_t i = 0; i < k; ++i) {
        sel[base + i] = order[i];
        wts[base + i] = std::exp(col[order[i] * HW] - m);
        z += wts[base + i];
      }
      T d{0};
      for (std::size_t i = 0; i < k; ++i) {
        wts[base + i] /= z;
        d += wts[base + i] * static_cast<T>(order[i]);
      }
      d0[b * HW + p] = d;
    }
  const auto ia = agg.id();
  Tensor<T> saved = d0;
  return agg.tape().record(
      std::move(d0), {ia},
      [ia, B, D, HW, k, sel = std::move(sel), wts = std::move(wts), saved = std::move(saved)](Tape<T>& t,
                                                                                              const Tensor<T>& g) {
        Tensor<T> ga(t.value(ia).shape());
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t p = 0; p < HW; ++p) {
            const std::size_t base = (b * HW + p) * k;
            const T d = saved[b * HW + p], gp = g[b * HW + p];
            for (std::size_t i = 0; i < k; ++i)
              ga[b * D * HW + sel[base + i] * HW + p] += gp * wts[base + i] * (static_cast<T>(sel[base + i]) - d);
          }
        t.accumulate(ia, std::move(ga));
      },
      "topk_regress");
}

/// d1(y,x) = 4 * sum_i w_i(y,x) * d0(nbhd_i) over the 3x3 coarse neighbourhood
/// of cell (y/4, x/4), clamped at the borders. Neighbour i = (dy+1)*3 + (dx+1).
template <class T>
Var<T> superpixel_upsample(const Var<T>& d0, const Var<T>& weights) {
  const auto& ds = d0.shape();
  const auto& ws = weights.shape();
  if (ds.size() != 3) fail_shape("superpixel_upsample: d0 must be [B,h,w], got ", to_string(ds));
  const std::size_t B = ds[0], h = ds[1], w = ds[2], H = h * kUpsampleFactor, W = w * kUpsampleFactor;
  if (ws != Shape{B, kNeighbours, H, W})
    fail_shape("superpixel_upsample: weights ", to_string(ws), " must be [", B, ",9,", H, ",", W, "]");
  auto nb = [h, w](std::size_t cy, std::size_t cx, std::size_t i) {
    const long long y = std::clamp<long long>(static_cast<long long>(cy) + static_cast<long long>(i / 3) - 1, 0,
                                              static_cast<long long>(h) - 1);
    const long long x = std::clamp<long long>(static_cast<long long>(cx) + static_cast<long long>(i % 3) - 1, 0,
                                              static_cast<long long>(w) - 1);
    return static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
  };
  const T scale = static_cast<T>(kUpsampleFactor);
  Tensor<T> d1(Shape{B, H, W});
  const T* dv = d0.value().data();
  const T* wv = weights.value().data();
  const std::size_t HW = H * W;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        T acc{0};
        for (std::size_t i = 0; i < kNeighbours; ++i)
          acc += wv[(b * kNeighbours + i) * HW + y * W + x] *
                 dv[b * h * w + nb(y / kUpsampleFactor, x / kUpsampleFactor, i)];
        d1[b * HW + y * W + x] = scale * acc;
      }
  const auto id = d0.id(), iw = weights.id();
  return d0.tape().record(
      std::move(d1), {id, iw},
      [id, iw, B, h, w, H, W, HW, nb, scale](Tape<T>& t, const Tensor<T>& g) {
        const auto& dv = t.value(id);
        const auto& wv = t.value(iw);
        Tensor<T> gd(dv.shape()), gw(wv.shape());
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
              const T gp = scale * g[b * HW + y * W + x];
              for (std::size_t i = 0; i < kNeighbours; ++i) {
                const std::size_t n = b * h * w + nb(y / kUpsampleFactor, x / kUpsampleFactor, i);
                const std::size_t wi = (b * kNeighbours + i) * HW + y * W + x;
                gw[wi] += gp * dv[n];
                gd[n] += gp * wv[wi];
              }
            }
        t.accumulate(id, std::move(gd));
        t.accumulate(iw, std::move(gw));
      },
      "superpixel_upsample");
}

/// [B, 9*16, h, w] logits, channel i*16 + sy*4 + sx, -> [B, 9, 4h, 4w].
template <class T>
Var<T> unfold_subpixels(const Var<T>& logits) {
  const auto& s = logits.shape();
  constexpr std::size_t f = kUpsampleFactor, ff = f * f;
  if (s.size() != 4 || s[1] != kNeighbours * ff)
    fail_shape("unfold_subpixels: expected [B,", kNeighbours * ff, ",h,w], got ", to_string(s));
  const std::size_t B = s[0], h = s[2], w = s[3];
  const Shape out_shape{B, kNeighbours, h * f, w * f};
  auto src_index = [=](std::size_t b, std::size_t i, std::size_t y, std::size_t x) {
    const std::size_t c = i * ff + (y % f) * f + (x % f);
    return ((b * kNeighbours * ff + c) * h + y / f) * w + x / f;
  };
  Tensor<T> out(out_shape);
  std::size_t o = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < kNeighbours; ++i)
      for (std::size_t y = 0; y < h * f; ++y)
        for (std::size_t x = 0; x < w * f; ++x) out[o++] = logits.value()[src_index(b, i, y, x)];
  const auto il = logits.id();
  const Shape in_shape = s;
  return logits.tape().record(
      std::move(out), {il},
      [il, in_shape, B, h, w, src_index](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T> gl(in_shape);
        std::size_t o = 0;
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t i = 0; i < kNeighbours; ++i)
            for (std::size_t y = 0; y < h * f; ++y)
              for (std::size_t x = 0; x < w * f; ++x) gl[src_index(b, i, y, x)] += g[o++];
        t.accumulate(il, std::move(gl));
      },
      "unfold_subpixels");
}

/// Convolutional head turning quarter-resolution left features into
/// per-pixel 9-way upsampling weights.
template <class T>
class SuperpixelHead {
 public:
  SuperpixelHead() = default;
  SuperpixelHead(Builder<T>& b, std::size_t in_channels, std::size_t hidden = 32) {
    hidden_ = ConvBn<T>::make(b, "spx.hidden", {hidden, in_channels, 3, 3}, ConvSpec::planar(1, 1));
    logits_ = ConvLayer<T>::make(b, "spx.logits", {kNeighbours * kUpsampleFactor * kUpsampleFactor, hidden, 3, 3},
                                 ConvSpec::planar(1, 1), true);
  }

  Var<T> logits(Context<T>& ctx, const Var<T>& features) const { return logits_(ctx, hidden_(ctx, features)); }

  /// Softmax-normalised [B,9,4h,4w] weights.
  Var<T> operator()(Context<T>& ctx, const Var<T>& features) const {
    return weights_from_logits(logits(ctx, features));
  }

  static Var<T> weights_from_logits(const Var<T>& logits) { return softmax_axis(unfold_subpixels(logits), 1); }

 private:
  ConvBn<T> hidden_;
  ConvLayer<T> logits_;
};

}  // namespace dualcv
