#pragma once

#include <array>
#include <optional>

#include <Eigen/Core>

#include "dualcv/tape.hpp"

namespace dualcv {

/// Per-axis convolution geometry over (depth, height, width).
struct ConvSpec {
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> pad{0, 0, 0};
  std::array<std::size_t, 3> dilation{1, 1, 1};

  static ConvSpec uniform(std::size_t stride, std::size_t pad, std::size_t dilation = 1) {
    return ConvSpec{{stride, stride, stride}, {pad, pad, pad}, {dilation, dilation, dilation}};
  }
  /// 2-D geometry embedded in the 3-D form (depth axis untouched).
  static ConvSpec planar(std::size_t stride, std::size_t pad, std::size_t dilation = 1) {
    return ConvSpec{{1, stride, stride}, {0, pad, pad}, {1, dilation, dilation}};
  }
};

namespace detail {

using Ext3 = std::array<std::size_t, 3>;

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                                   std::size_t dil) {
  const long long span = static_cast<long long>(dil) * (static_cast<long long>(k) - 1) + 1;
  const long long num = static_cast<long long>(in) + 2 * static_cast<long long>(pad) - span;
  if (num < 0) fail_shape("kernel span ", span, " exceeds padded input ", in + 2 * pad);
  return static_cast<std::size_t>(num) / stride + 1;
}

inline Ext3 conv_out(const Ext3& in, const Ext3& k, const ConvSpec& s) {
  Ext3 o{};
  for (int a = 0; a < 3; ++a) {
    if (s.stride[a] < 1 || s.dilation[a] < 1) fail_shape("stride and dilation must be >= 1");
    o[a] = conv_out_extent(in[a], k[a], s.stride[a], s.pad[a], s.dilation[a]);
  }
  return o;
}

/// Geometry of one im2col lowering: input extents `in`, kernel `k`, output `out`.
struct Lowering {
  std::size_t channels;
  Ext3 in, k, out;
  ConvSpec spec;

  std::size_t rows() const { return channels * k[0] * k[1] * k[2]; }
  std::size_t cols() const { return out[0] * out[1] * out[2]; }
  std::size_t in_size() const { return channels * in[0] * in[1] * in[2]; }
};

/// col[(c,kz,ky,kx), (oz,oy,ox)] = x[c, oz*s-p+kz*d, ...] or 0 outside.
template <class T>
void im2col(const Lowering& L, const T* x, T* col) {
  const auto [D, H, W] = L.in;
  const auto [OD, OH, OW] = L.out;
  const auto& s = L.spec;
  std::size_t row = 0;
  for (std::size_t c = 0; c < L.channels; ++c)
    for (std::size_t kz = 0; kz < L.k[0]; ++kz)
      for (std::size_t ky = 0; ky < L.k[1]; ++ky)
        for (std::size_t kx = 0; kx < L.k[2]; ++kx, ++row) {
          T* dst = col + row * L.cols();
          const long long zoff = static_cast<long long>(kz * s.dilation[0]) - static_cast<long long>(s.pad[0]);
          const long long yoff = static_cast<long long>(ky * s.dilation[1]) - static_cast<long long>(s.pad[1]);
          const long long xoff = static_cast<long long>(kx * s.dilation[2]) - static_cast<long long>(s.pad[2]);
          for (std::size_t oz = 0; oz < OD; ++oz) {
            const long long iz = static_cast<long long>(oz * s.stride[0]) + zoff;
            for (std::size_t oy = 0; oy < OH; ++oy, dst += OW) {
              const long long iy = static_cast<long long>(oy * s.stride[1]) + yoff;
              if (iz < 0 || iz >= static_cast<long long>(D) || iy < 0 || iy >= static_cast<long long>(H)) {
                std::fill_n(dst, OW, T{0});
                continue;
              }
              const T* src = x + ((c * D + static_cast<std::size_t>(iz)) * H + static_cast<std::size_t>(iy)) * W;
              for (std::size_t ox = 0; ox < OW; ++ox) {
                const long long ix = static_cast<long long>(ox * s.stride[2]) + xoff;
                dst[ox] = (ix >= 0 && ix < static_cast<long long>(W)) ? src[ix] : T{0};
              }
            }
          }
        }
}

/// Adjoint of im2col: scatter-adds columns back into x (x is not cleared).
template <class T>
void col2im(const Lowering& L, const T* col, T* x) {
  const auto [D, H, W] = L.in;
  const auto [OD, OH, OW] = L.out;
  const auto& s = L.spec;
  std::size_t row = 0;
  for (std::size_t c = 0; c < L.channels; ++c)
    for (std::size_t kz = 0; kz < L.k[0]; ++kz)
      for (std::size_t ky = 0; ky < L.k[1]; ++ky)
        for (std::size_t kx = 0; kx < L.k[2]; ++kx, ++row) {
          const T* src = col + row * L.cols();
          const long long zoff = static_cast<long long>(kz * s.dilation[0]) - static_cast<long long>(s.pad[0]);
          const long long yoff = static_cast<long long>(ky * s.dilation[1]) - static_cast<long long>(s.pad[1]);
          const long long xoff = static_cast<long long>(kx * s.dilation[2]) - static_cast<long long>(s.pad[2]);
          for (std::size_t oz = 0; oz < OD; ++oz) {
            const long long iz = static_cast<long long>(oz * s.stride[0]) + zoff;
            for (std::size_t oy = 0; oy < OH; ++oy, src += OW) {
              const long long iy = static_cast<long long>(oy * s.stride[1]) + yoff;
              if (iz < 0 || iz >= static_cast<long long>(D) || iy < 0 || iy >= static_cast<long long>(H)) continue;
              T* dst = x + ((c * D + static_cast<std::size_t>(iz)) * H + static_cast<std::size_t>(iy)) * W;
              for (std::size_t ox = 0; ox < OW; ++ox) {
                const long long ix = static_cast<long long>(ox * s.stride[2]) + xoff;
                if (ix >= 0 && ix < static_cast<long long>(W)) dst[ix] += src[ox];
              }
            }
          }
        }
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using CMatMap = Eigen::Map<const RowMat<T>>;

/// Views a rank-4 or rank-5 activation as (B, C, D, H, W).
inline std::array<std::size_t, 5> as_volume(const Shape& s, const char* what) {
  if (s.size() == 4) return {s[0], s[1], 1, s[2], s[3]};
  if (s.size() == 5) return {s[0], s[1], s[2], s[3], s[4]};
  fail_shape(what, ": expected rank 4 or 5, got ", to_string(s));
}

inline bool is_pointwise(const Lowering& L) {
  for (int a = 0; a < 3; ++a)
    if (L.k[a] != 1 || L.spec.stride[a] != 1 || L.spec.pad[a] != 0) return false;
  return true;
}

template <class T>
struct ConvKernel {
  Lowering L;
  std::size_t batch, out_channels;

  /// y[b] = W * col(x[b]) (+ bias)
  void forward(const T* x, const T* w, const T* bias, T* y) const {
    const std::size_t R = L.rows(), P = L.cols();
    std::vector<T> col(is_pointwise(L) ? 0 : R * P);
    CMatMap<T> Wm(w, static_cast<Eigen::Index>(out_channels), static_cast<Eigen::Index>(R));
    for (std::size_t b = 0; b < batch; ++b) {
      const T* xb = x + b * L.in_size();
      const T* cp = xb;
      if (!col.empty()) {
        im2col(L, xb, col.data());
        cp = col.data();
      }
      CMatMap<T> Cm(cp, static_cast<Eigen::Index>(R), static_cast<Eigen::Index>(P));
      MatMap<T> Ym(y + b * out_channels * P, static_cast<Eigen::Index>(out_channels), static_cast<Eigen::Index>(P));
      Ym.noalias() = Wm * Cm;
      if (bias)
        for (std::size_t o = 0; o < out_channels; ++o) Ym.row(static_cast<Eigen::Index>(o)).array() += bias[o];
    }
  }

  /// Accumulates gradients for whichever of gx/gw/gb are non-null.
  void backward(const T* x, const T* w, const T* gy, T* gx, T* gw, T* gb) const {
    const std::size_t R = L.rows(), P = L.cols();
    const bool pointwise = is_pointwise(L);
    std::vector<T> col(pointwise ? 0 : R * P);
    CMatMap<T> Wm(w, static_cast<Eigen::Index>(out_channels), static_cast<Eigen::Index>(R));
    for (std::size_t b = 0; b < batch; ++b) {
      CMatMap<T> G(gy + b * out_channels * P, static_cast<Eigen::Index>(out_channels), static_cast<Eigen::Index>(P));
      if (gb)
        for (std::size_t o = 0; o < out_channels; ++o) gb[o] += G.row(static_cast<Eigen::Index>(o)).sum();
      if (gw) {
        const T* xb = x + b * L.in_size();
        const T* cp = xb;
        if (!pointwise) {
          im2col(L, xb, col.data());
          cp = col.data();
        }
        CMatMap<T> Cm(cp, static_cast<Eigen::Index>(R), static_cast<Eigen::Index>(P));
        MatMap<T> GW(gw, static_cast<Eigen::Index>(out_channels), static_cast<Eigen::Index>(R));
        GW.noalias() += G * Cm.transpose();
      }
      if (gx) {
        T* gxb = gx + b * L.in_size();
        if (pointwise) {
          MatMap<T> GX(gxb, static_cast<Eigen::Index>(R), static_cast<Eigen::Index>(P));
          GX.noalias() += Wm.transpose() * G;
        } else {
          MatMap<T> Cm(col.data(), static_cast<Eigen::Index>(R), static_cast<Eigen::Index>(P));
          Cm.noalias() = Wm.transpose() * G;
          col2im(L, col.data(), gxb);
        }
      }
    }
  }
};

template <class T>
ConvKernel<T> make_conv_kernel(const Shape& xs, const Shape& ws, const ConvSpec& spec, const char* what) {
  const auto [B, C, D, H, W] = as_volume(xs, what);
  const auto [O, Cw, kd, kh, kw] = as_volume(ws, what);
  if (xs.size() != ws.size()) fail_shape(what, ": input rank ", xs.size(), " vs weight rank ", ws.size());
  if (C != Cw)
    fail_shape(what, ": input has ", C, " channels but weight expects ", Cw, " (x ", to_string(xs), ", w ",
               to_string(ws), ")");
  Lowering L{C, {D, H, W}, {kd, kh, kw}, {}, spec};
  L.out = conv_out(L.in, L.k, spec);
  return ConvKernel<T>{L, B, O};
}

template <class T>
Shape conv_out_shape(const Shape& xs, const ConvKernel<T>& K) {
  if (xs.size() == 4) return {K.batch, K.out_channels, K.L.out[1], K.L.out[2]};
  return {K.batch, K.out_channels, K.L.out[0], K.L.out[1], K.L.out[2]};
}

template <class T>
Var<T> conv_impl(const Var<T>& x, const Var<T>& w, const std::optional<Var<T>>& b, const ConvSpec& spec,
                 const char* what) {
  const auto K = make_conv_kernel<T>(x.shape(), w.shape(), spec, what);
  if (b && (b->shape() != Shape{K.out_channels}))
    fail_shape(what, ": bias shape ", to_string(b->shape()), " vs ", K.out_channels, " output channels");
  Tensor<T> y(conv_out_shape(x.shape(), K));
  K.forward(x.value().data(), w.value().data(), b ? b->value().data() : nullptr, y.data());
  const auto ix = x.id(), iw = w.id();
  const std::optional<std::size_t> ib = b ? std::optional<std::size_t>(b->id()) : std::nullopt;
  std::vector<std::size_t> inputs{ix, iw};
  if (ib) inputs.push_back(*ib);
  return x.tape().record(std::move(y), inputs,
                         [K, ix, iw, ib](Tape<T>& t, const Tensor<T>& g) {
                           const auto& xv = t.value(ix);
                           const auto& wv = t.value(iw);
                           std::optional<Tensor<T>> gx, gw, gb;
                           if (t.requires_grad(ix)) gx.emplace(xv.shape());
                           if (t.requires_grad(iw)) gw.emplace(wv.shape());
                           if (ib && t.requires_grad(*ib)) gb.emplace(t.value(*ib).shape());
                           K.backward(xv.data(), wv.data(), g.data(), gx ? gx->data() : nullptr,
                                      gw ? gw->data() : nullptr, gb ? gb->data() : nullptr);
                           if (gx) t.accumulate(ix, std::move(*gx));
                           if (gw) t.accumulate(iw, std::move(*gw));
                           if (gb) t.accumulate(*ib, std::move(*gb));
                         },
                         what);
}

}  // namespace detail

/// x [B,C,H,W], w [O,C,kh,kw], b [O] -> [B,O,H',W'].
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const std::optional<Var<T>>& b, std::size_t stride = 1,
              std::size_t pad = 0, std::size_t dilation = 1) {
  if (x.shape().size() != 4 || w.shape().size() != 4)
    fail_shape("conv2d: expected rank-4 input and weight, got ", to_string(x.shape()), " and ", to_string(w.shape()));
  return detail::conv_impl(x, w, b, ConvSpec::planar(stride, pad, dilation), "conv2d");
}

/// x [B,C,D,H,W], w [O,C,kd,kh,kw], b [O] -> [B,O,D',H',W'].
template <class T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const std::optional<Var<T>>& b, const ConvSpec& spec) {
  if (x.shape().size() != 5 || w.shape().size() != 5)
    fail_shape("conv3d: expected rank-5 input and weight, got ", to_string(x.shape()), " and ", to_string(w.shape()));
  return detail::conv_impl(x, w, b, spec, "conv3d");
}

/// Adjoint of conv3d with respect to its input.
/// x [B,Cin,D,H,W], w [Cin,Cout,kd,kh,kw] -> [B,Cout,D',H',W'] with
/// D' = (D-1)*stride - 2*pad + dilation*(kd-1) + 1 (4/2/1 doubles each extent).
template <class T>
Var<T> conv3d_transposed(const Var<T>& x, const Var<T>& w, const std::optional<Var<T>>& b, const ConvSpec& spec) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 5 || ws.size() != 5)
    fail_shape("conv3d_transposed: expected rank-5 input and weight, got ", to_string(xs), " and ", to_string(ws));
  if (xs[1] != ws[0])
    fail_shape("conv3d_transposed: input has ", xs[1], " channels but weight expects ", ws[0]);
  const std::size_t B = xs[0], Cin = xs[1], Cout = ws[1];
  detail::Ext3 out{};
  for (int a = 0; a < 3; ++a) {
    const long long e = (static_cast<long long>(xs[2 + a]) - 1) * static_cast<long long>(spec.stride[a]) -
                        2 * static_cast<long long>(spec.pad[a]) +
                        static_cast<long long>(spec.dilation[a]) * (static_cast<long long>(ws[2 + a]) - 1) + 1;
    if (e <= 0) fail_shape("conv3d_transposed: non-positive output extent");
    out[a] = static_cast<std::size_t>(e);
  }
  // The forward conv this op is the adjoint of: Cout channels over `out` -> Cin channels over x's extents.
  detail::Lowering L{Cout, out, {ws[2], ws[3], ws[4]}, {}, spec};
  L.out = detail::conv_out(L.in, L.k, spec);
  if (L.out != detail::Ext3{xs[2], xs[3], xs[4]}) fail_shape("conv3d_transposed: geometry is not invertible");
  if (b && (b->shape() != Shape{Cout})) fail_shape("conv3d_transposed: bias must have ", Cout, " entries");
  const detail::ConvKernel<T> K{L, B, Cin};

  Tensor<T> y(Shape{B, Cout, out[0], out[1], out[2]});
  {
    const std::size_t R = L.rows(), P = L.cols();
    std::vector<T> col(R * P);
    detail::CMatMap<T> Wm(w.value().data(), static_cast<Eigen::Index>(Cin), static_cast<Eigen::Index>(R));
    for (std::size_t bi = 0; bi < B; ++bi) {
      detail::CMatMap<T> X(x.value().data() + bi * Cin * P, static_cast<Eigen::Index>(Cin),
                           static_cast<Eigen::Index>(P));
      detail::MatMap<T> Cm(col.data(), static_cast<Eigen::Index>(R), static_cast<Eigen::Index>(P));
      Cm.noalias() = Wm.transpose() * X;
      detail::col2im(L, col.data(), y.data() + bi * L.in_size());
    }
    if (b) {
      const std::size_t vox = out[0] * out[1] * out[2];
      for (std::size_t bi = 0; bi < B; ++bi)
        for (std::size_t c = 0; c < Cout; ++c) {
          T* p = y.data() + (bi * Cout + c) * vox;
          const T bv = b->value()[c];
          for (std::size_t i = 0; i < vox; ++i) p[i] += bv;
        }
    }
  }
  const auto ix = x.id(), iw = w.id();
  const std::optional<std::size_t> ib = b ? std::optional<std::size_t>(b->id()) : std::nullopt;
  std::vector<std::size_t> inputs{ix, iw};
  if (ib) inputs.push_back(*ib);
  return x.tape().record(
      std::move(y), inputs,
      [K, ix, iw, ib](Tape<T>& t, const Tensor<T>& g) {
        const auto& xv = t.value(ix);
        const auto& wv = t.value(iw);
        // Gradient w.r.t. x is the forward conv of g; w.r.t. w is the conv weight gradient with roles swapped.
        if (t.requires_grad(ix)) {
          Tensor<T> gx(xv.shape());
          K.forward(g.data(), wv.data(), nullptr, gx.data());
          t.accumulate(ix, std::move(gx));
        }
        if (t.requires_grad(iw)) {
          Tensor<T> gw(wv.shape());
          K.backward(g.data(), wv.data(), xv.data(), nullptr, gw.data(), nullptr);
          t.accumulate(iw, std::move(gw));
        }
        if (ib && t.requires_grad(*ib)) {
          const auto& shp = g.shape();
          const std::size_t vox = shp[2] * shp[3] * shp[4];
          Tensor<T> gb(Shape{shp[1]});
          for (std::size_t bi = 0; bi < shp[0]; ++bi)
            for (std::size_t c = 0; c < shp[1]; ++c) {
              const T* p = g.data() + (bi * shp[1] + c) * vox;
              T s{0};
              for (std::size_t i = 0; i < vox; ++i) s += p[i];
              gb[c] += s;
            }
          t.accumulate(*ib, std::move(gb));
        }
      },
      "conv3d_transposed");
}

}  // namespace dualcv
