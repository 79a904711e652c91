#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>

#include "dualcv/tape.hpp"

namespace dualcv {

enum class VolumeKind { gwc_dot, gwc_sub, norm_corr, concat };

inline constexpr std::array<VolumeKind, 4> kAllVolumeKinds{VolumeKind::gwc_dot, VolumeKind::gwc_sub,
                                                           VolumeKind::norm_corr, VolumeKind::concat};

inline std::string_view to_string(VolumeKind k) {
  switch (k) {
    case VolumeKind::gwc_dot: return "gwc-dot";
    case VolumeKind::gwc_sub: return "gwc-sub";
    case VolumeKind::norm_corr: return "norm-corr";
    case VolumeKind::concat: return "concat";
  }
  return "?";
}

inline std::optional<VolumeKind> parse_volume_kind(std::string_view s) {
  for (auto k : kAllVolumeKinds)
    if (to_string(k) == s) return k;
  return std::nullopt;
}

/// Feature channels the builder consumes: the concatenated map for the
/// group-wise kinds, the 12-channel compression for the others.
inline bool uses_compressed_features(VolumeKind k) { return k == VolumeKind::norm_corr || k == VolumeKind::concat; }

inline constexpr std::size_t kCompressedChannels = 12;

/// Channel count of a built volume.
inline std::size_t volume_channels(VolumeKind k, std::size_t groups) {
  switch (k) {
    case VolumeKind::gwc_dot:
    case VolumeKind::gwc_sub: return groups;
    case VolumeKind::norm_corr: return 1;
    case VolumeKind::concat: return 2 * kCompressedChannels;
  }
  return 0;
}

/// A built matching-cost block, data shaped [B, Cv, Dq, H, W].
template <class T>
struct CostVolume {
  VolumeKind kind;
  Var<T> data;
  std::size_t groups = 0;  // group-wise kinds only
};

namespace detail {

struct FeatureDims {
  std::size_t B, C, H, W;
};

template <class T>
FeatureDims check_pair(const Var<T>& fl, const Var<T>& fr, std::size_t disparities, const char* what) {
  const auto& s = fl.shape();
  if (s.size() != 4) fail_shape(what, ": features must be [B,C,H,W], got ", to_string(s));
  if (fr.shape() != s) fail_shape(what, ": left ", to_string(s), " and right ", to_string(fr.shape()), " differ");
  if (disparities < 1) fail_shape(what, ": need at least one disparity level");
  return {s[0], s[1], s[2], s[3]};
}

template <class T>
FeatureDims check_groups(const Var<T>& fl, const Var<T>& fr, std::size_t groups, std::size_t disparities,
                         const char* what) {
  auto d = check_pair(fl, fr, disparities, what);
  if (groups == 0 || d.C % groups != 0)
    fail_shape(what, ": ", d.C, " channels are not divisible into ", groups, " groups");
  return d;
}

}  // namespace detail

/// C(g,d,y,x) = (Ng/Nc) * <fl_g(x,y), fr_g(x-d,y)>, zero where x-d < 0.
template <class T>
CostVolume<T> build_gwc_dot(const Var<T>& fl, const Var<T>& fr, std::size_t groups, std::size_t disparities) {
  const auto [B, C, H, W] = detail::check_groups(fl, fr, groups, disparities, "build_gwc_dot");
  const std::size_t cpg = C / groups, D = disparities, HW = H * W;
  const T norm = static_cast<T>(groups) / static_cast<T>(C);
  Tensor<T> out(Shape{B, groups, D, H, W});
  const T* L = fl.value().data();
  const T* R = fr.value().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t d = 0; d < D; ++d)
        for (std::size_t y = 0; y < H; ++y) {
          T* o = out.data() + (((b * groups + g) * D + d) * H + y) * W;
          for (std::size_t c = g * cpg; c < (g + 1) * cpg; ++c) {
            const T* l = L + (b * C + c) * HW + y * W;
            const T* r = R + (b * C + c) * HW + y * W;
            for (std::size_t x = d; x < W; ++x) o[x] += l[x] * r[x - d];
          }
          for (std::size_t x = d; x < W; ++x) o[x] *= norm;
        }
  const auto il = fl.id(), ir = fr.id();
  auto v = fl.tape().record(
      std::move(out), {il, ir},
      [il, ir, B, C, H, W, groups, cpg, D, HW, norm](Tape<T>& t, const Tensor<T>& G) {
        const auto& lv = t.value(il);
        const auto& rv = t.value(ir);
        Tensor<T> gl(lv.shape()), gr(rv.shape());
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t g = 0; g < groups; ++g)
            for (std::size_t d = 0; d < D; ++d)
              for (std::size_t y = 0; y < H; ++y) {
                const T* go = G.data() + (((b * groups + g) * D + d) * H + y) * W;
                for (std::size_t c = g * cpg; c < (g + 1) * cpg; ++c) {
                  const std::size_t off = (b * C + c) * HW + y * W;
                  const T* l = lv.data() + off;
                  const T* r = rv.data() + off;
                  T* dl = gl.data() + off;
                  T* dr = gr.data() + off;
                  for (std::size_t x = d; x < W; ++x) {
                    const T k = norm * go[x];
                    dl[x] += k * r[x - d];
                    dr[x - d] += k * l[x];
                  }
                }
              }
        t.accumulate(il, std::move(gl));
        t.accumulate(ir, std::move(gr));
      },
      "build_gwc_dot");
  return {VolumeKind::gwc_dot, v, groups};
}

/// C(g,d,y,x) = (Ng/Nc) * ||fl_g(x,y) - fr_g(x-d,y)||^2, zero where x-d < 0.
template <class T>
CostVolume<T> build_gwc_sub(const Var<T>& fl, const Var<T>& fr, std::size_t groups, std::size_t disparities) {
  const auto [B, C, H, W] = detail::check_groups(fl, fr, groups, disparities, "build_gwc_sub");
  const std::size_t cpg = C / groups, D = disparities, HW = H * W;
  const T norm = static_cast<T>(groups) / static_cast<T>(C);
  Tensor<T> out(Shape{B, groups, D, H, W});
  const T* L = fl.value().data();
  const T* R = fr.value().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t d = 0; d < D; ++d)
        for (std::size_t y = 0; y < H; ++y) {
          T* o = out.data() + (((b * groups + g) * D + d) * H + y) * W;
          for (std::size_t c = g * cpg; c < (g + 1) * cpg; ++c) {
            const T* l = L + (b * C + c) * HW + y * W;
            const T* r = R + (b * C + c) * HW + y * W;
            for (std::size_t x = d; x < W; ++x) {
              const T e = l[x] - r[x - d];
              o[x] += e * e;
            }
          }
          for (std::size_t x = d; x < W; ++x) o[x] *= norm;
        }
  const auto il = fl.id(), ir = fr.id();
  auto v = fl.tape().record(
      std::move(out), {il, ir},
      [il, ir, B, C, H, W, groups, cpg, D, HW, norm](Tape<T>& t, const Tensor<T>& G) {
        const auto& lv = t.value(il);
        const auto& rv = t.value(ir);
        Tensor<T> gl(lv.shape()), gr(rv.shape());
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t g = 0; g < groups; ++g)
            for (std::size_t d = 0; d < D; ++d)
              for (std::size_t y = 0; y < H; ++y) {
                const T* go = G.data() + (((b * groups + g) * D + d) * H + y) * W;
                for (std::size_t c = g * cpg; c < (g + 1) * cpg; ++c) {
                  const std::size_t off = (b * C + c) * HW + y * W;
                  const T* l = lv.data() + off;
                  const T* r = rv.data() + off;
                  T* dl = gl.data() + off;
                  T* dr = gr.data() + off;
                  for (std::size_t x = d; x < W; ++x) {
                    const T k = T{2} * norm * go[x] * (l[x] - r[x - d]);
                    dl[x] += k;
                    dr[x - d] -= k;
                  }
                }
              }
        t.accumulate(il, std::move(gl));
        t.accumulate(ir, std::move(gr));
      },
      "build_gwc_sub");
  return {VolumeKind::gwc_sub, v, groups};
}

/// Cosine similarity between fl(:,x,y) and fr(:,x-d,y); the norm product is
/// clamped below at 1e-9. Single channel, zero where x-d < 0.
template <class T>
CostVolume<T> build_norm_corr(const Var<T>& fl, const Var<T>& fr, std::size_t disparities) {
  const auto [B, C, H, W] = detail::check_pair(fl, fr, disparities, "build_norm_corr");
  if (C != kCompressedChannels)
    fail_shape("build_norm_corr: expects ", kCompressedChannels, "-channel compressed features, got ", C);
  const std::size_t D = disparities, HW = H * W;
  constexpr double kFloor = 1e-9;
  const T* L = fl.value().data();
  const T* R = fr.value().data();
  // Per-pixel L2 norms, accumulated in double for the oracle tolerance.
  auto norms = [&](const T* f) {
    std::vector<double> n(B * HW);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < HW; ++i) {
          const double v = f[(b * C + c) * HW + i];
          n[b * HW + i] += v * v;
        }
    for (auto& v : n) v = std::sqrt(v);
    return n;
  };
  auto nl = norms(L), nr = norms(R);
  Tensor<T> out(Shape{B, 1, D, H, W});
  std::vector<double> dot(W);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t y = 0; y < H; ++y) {
        std::fill(dot.begin(), dot.end(), 0.0);
        for (std::size_t c = 0; c < C; ++c) {
          const T* l = L + (b * C + c) * HW + y * W;
          const T* r = R + (b * C + c) * HW + y * W;
          for (std::size_t x = d; x < W; ++x) dot[x] += static_cast<double>(l[x]) * r[x - d];
        }
        T* o = out.data() + ((b * D + d) * H + y) * W;
        for (std::size_t x = d; x < W; ++x)
          o[x] = static_cast<T>(dot[x] / std::max(nl[b * HW + y * W + x] * nr[b * HW + y * W + x - d], kFloor));
      }
  const auto il = fl.id(), ir = fr.id();
  Tensor<T> saved = out;
  auto v = fl.tape().record(
      std::move(out), {il, ir},
      [il, ir, B, C, H, W, D, HW, nl = std::move(nl), nr = std::move(nr), saved = std::move(saved)](
          Tape<T>& t, const Tensor<T>& G) {
        const auto& lv = t.value(il);
        const auto& rv = t.value(ir);
        Tensor<T> gl(lv.shape()), gr(rv.shape());
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t d = 0; d < D; ++d)
            for (std::size_t y = 0; y < H; ++y) {
              const std::size_t row = ((b * D + d) * H + y) * W;
              for (std::size_t x = d; x < W; ++x) {
                const T g = G[row + x];
                if (g == T{0}) continue;
                const double a = nl[b * HW + y * W + x], r = nr[b * HW + y * W + x - d];
                const double denom = a * r;
                const double cosv = saved[row + x];
                // d cos / d l = r_vec / denom - cos * l / |l|^2 (symmetric for r); clamped: r_vec / floor.
                const bool clamped = denom < kFloor;
                const double inv = 1.0 / (clamped ? kFloor : denom);
                const double cl = clamped ? 0.0 : cosv / (a * a);
                const double cr = clamped ? 0.0 : cosv / (r * r);
                for (std::size_t c = 0; c < C; ++c) {
                  const std::size_t li = (b * C + c) * HW + y * W + x;
                  const std::size_t ri = li - d;
                  const double lvv = lv[li], rvv = rv[ri];
                  gl[li] += static_cast<T>(g * (rvv * inv - cl * lvv));
                  gr[ri] += static_cast<T>(g * (lvv * inv - cr * rvv));
                }
              }
            }
        t.accumulate(il, std::move(gl));
        t.accumulate(ir, std::move(gr));
      },
      "build_norm_corr");
  return {VolumeKind::norm_corr, v, 0};
}

/// Channels [0,C) hold fl(x,y), [C,2C) hold fr(x-d,y); both zero where x-d < 0.
template <class T>
CostVolume<T> build_concat(const Var<T>& fl, const Var<T>& fr, std::size_t disparities) {
  const auto [B, C, H, W] = detail::check_pair(fl, fr, disparities, "build_concat");
  if (C != kCompressedChannels)
    fail_shape("build_concat: expects ", kCompressedChannels, "-channel compressed features, got ", C);
  const std::size_t D = disparities, HW = H * W;
  Tensor<T> out(Shape{B, 2 * C, D, H, W});
  const T* L = fl.value().data();
  const T* R = fr.value().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t d = 0; d < D; ++d)
        for (std::size_t y = 0; y < H; ++y) {
          const T* l = L + (b * C + c) * HW + y * W;
          const T* r = R + (b * C + c) * HW + y * W;
          T* ol = out.data() + (((b * 2 * C + c) * D + d) * H + y) * W;
          T* orr = out.data() + (((b * 2 * C + C + c) * D + d) * H + y) * W;
          for (std::size_t x = d; x < W; ++x) {
            ol[x] = l[x];
            orr[x] = r[x - d];
          }
        }
  const auto il = fl.id(), ir = fr.id();
  auto v = fl.tape().record(
      std::move(out), {il, ir},
      [il, ir, B, C, H, W, D, HW](Tape<T>& t, const Tensor<T>& G) {
        Tensor<T> gl(Shape{B, C, H, W}), gr(Shape{B, C, H, W});
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t d = 0; d < D; ++d)
              for (std::size_t y = 0; y < H; ++y) {
                T* dl = gl.data() + (b * C + c) * HW + y * W;
                T* dr = gr.data() + (b * C + c) * HW + y * W;
                const T* gol = G.data() + (((b * 2 * C + c) * D + d) * H + y) * W;
                const T* gor = G.data() + (((b * 2 * C + C + c) * D + d) * H + y) * W;
                for (std::size_t x = d; x < W; ++x) {
                  dl[x] += gol[x];
                  dr[x - d] += gor[x];
                }
              }
        t.accumulate(il, std::move(gl));
        t.accumulate(ir, std::move(gr));
      },
      "build_concat");
  return {VolumeKind::concat, v, 0};
}

/// Dispatches on kind. `groups` is ignored by the non-group kinds.
template <class T>
CostVolume<T> build_volume(VolumeKind kind, const Var<T>& fl, const Var<T>& fr, std::size_t groups,
                           std::size_t disparities) {
  switch (kind) {
    case VolumeKind::gwc_dot: return build_gwc_dot(fl, fr, groups, disparities);
    case VolumeKind::gwc_sub: return build_gwc_sub(fl, fr, groups, disparities);
    case VolumeKind::norm_corr: return build_norm_corr(fl, fr, disparities);
    case VolumeKind::concat: return build_concat(fl, fr, disparities);
  }
  fail_shape("unknown volume kind");
}

}  // namespace dualcv
