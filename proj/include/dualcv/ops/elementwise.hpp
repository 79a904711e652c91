#pragma once

#include <cmath>
#include <vector>

#include "dualcv/tape.hpp"

namespace dualcv {

namespace detail {

template <class T>
void require_same_tape(const Var<T>& a, const Var<T>& b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands recorded on different tapes");
}

/// (outer, extent, inner) factorisation of a shape around one axis.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) fail_shape("axis ", axis, " invalid for rank ", s.size());
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace detail

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same_tape(a, b);
  a.value().require_same_shape(b.value(), "add");
  Tensor<T> out = a.value();
  out += b.value();
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib},
                         [ia, ib](Tape<T>& t, const Tensor<T>& g) {
                           t.accumulate(ia, g);
                           t.accumulate(ib, g);
                         },
                         "add");
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same_tape(a, b);
  a.value().require_same_shape(b.value(), "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib},
                         [ia, ib](Tape<T>& t, const Tensor<T>& g) {
                           t.accumulate(ia, g);
                           if (t.requires_grad(ib)) {
                             Tensor<T> n = g;
                             n *= T{-1};
                             t.accumulate(ib, std::move(n));
                           }
                         },
                         "sub");
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_tape(a, b);
  a.value().require_same_shape(b.value(), "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib},
                         [ia, ib](Tape<T>& t, const Tensor<T>& g) {
                           const auto& va = t.value(ia);
                           const auto& vb = t.value(ib);
                           if (t.requires_grad(ia)) {
                             Tensor<T> ga = g;
                             for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= vb[i];
                             t.accumulate(ia, std::move(ga));
                           }
                           if (t.requires_grad(ib)) {
                             Tensor<T> gb = g;
                             for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= va[i];
                             t.accumulate(ib, std::move(gb));
                           }
                         },
                         "mul");
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  out *= s;
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia},
                         [ia, s](Tape<T>& t, const Tensor<T>& g) {
                           Tensor<T> ga = g;
                           ga *= s;
                           t.accumulate(ia, std::move(ga));
                         },
                         "scale");
}

template <class T>
Var<T> sum(const Var<T>& a) {
  T s{0};
  for (auto v : a.value().values()) s += v;
  const auto ia = a.id();
  const Shape in_shape = a.shape();
  return a.tape().record(Tensor<T>::scalar(s), {ia},
                         [ia, in_shape](Tape<T>& t, const Tensor<T>& g) {
                           t.accumulate(ia, Tensor<T>(in_shape, g[0]));
                         },
                         "sum");
}

template <class T>
Var<T> leaky_relu(const Var<T>& x, T slope = T(0.01)) {
  if (slope < T{0} || slope >= T{1}) fail_shape("leaky_relu slope must lie in [0,1), got ", slope);
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = v > T{0} ? v : slope * v;
  const auto ix = x.id();
  return x.tape().record(std::move(out), {ix},
                         [ix, slope](Tape<T>& t, const Tensor<T>& g) {
                           const auto& xv = t.value(ix);
                           Tensor<T> gx = g;
                           for (std::size_t i = 0; i < gx.size(); ++i)
                             if (!(xv[i] > T{0})) gx[i] *= slope;
                           t.accumulate(ix, std::move(gx));
                         },
                         slope == T{0} ? "relu" : "leaky_relu");
}

template <class T>
Var<T> relu(const Var<T>& x) {
  return leaky_relu(x, T{0});
}

/// Concatenation along `axis`.
template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) fail_shape("concat of zero tensors");
  Shape out_shape = parts[0].shape();
  if (axis >= out_shape.size()) fail_shape("concat axis ", axis, " invalid for rank ", out_shape.size());
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != out_shape.size()) fail_shape("concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != parts[0].shape()[i])
        fail_shape("concat shape mismatch ", to_string(s), " vs ", to_string(parts[0].shape()));
    out_shape[axis] += s[axis];
  }
  Tensor<T> out(out_shape);
  const auto so = detail::split_axis(out_shape, axis);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto sp = detail::split_axis(p.shape(), axis);
    for (std::size_t o = 0; o < so.outer; ++o)
      std::copy_n(p.value().data() + o * sp.extent * sp.inner, sp.extent * sp.inner,
                  out.data() + (o * so.extent + off) * so.inner);
    ids.push_back(p.id());
    offsets.push_back(off);
    off += sp.extent;
  }
  return parts[0].tape().record(std::move(out), ids,
                                [ids, offsets, axis, so](Tape<T>& t, const Tensor<T>& g) {
                                  for (std::size_t k = 0; k < ids.size(); ++k) {
                                    if (!t.requires_grad(ids[k])) continue;
                                    const auto& shp = t.value(ids[k]).shape();
                                    const auto sp = detail::split_axis(shp, axis);
                                    Tensor<T> gp(shp);
                                    for (std::size_t o = 0; o < so.outer; ++o)
                                      std::copy_n(g.data() + (o * so.extent + offsets[k]) * so.inner,
                                                  sp.extent * sp.inner, gp.data() + o * sp.extent * sp.inner);
                                    t.accumulate(ids[k], std::move(gp));
                                  }
                                },
                                "concat");
}

/// Keeps indices [begin, begin+length) of `axis`.
template <class T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t begin, std::size_t length) {
  const Shape in_shape = x.shape();
  const auto si = detail::split_axis(in_shape, axis);
  if (length == 0 || begin + length > si.extent)
    fail_shape("slice [", begin, ",", begin + length, ") outside extent ", si.extent);
  Shape out_shape = in_shape;
  out_shape[axis] = length;
  Tensor<T> out(out_shape);
  for (std::size_t o = 0; o < si.outer; ++o)
    std::copy_n(x.value().data() + (o * si.extent + begin) * si.inner, length * si.inner,
                out.data() + o * length * si.inner);
  const auto ix = x.id();
  return x.tape().record(std::move(out), {ix},
                         [ix, in_shape, si, begin, length](Tape<T>& t, const Tensor<T>& g) {
                           Tensor<T> gx(in_shape);
                           for (std::size_t o = 0; o < si.outer; ++o)
                             std::copy_n(g.data() + o * length * si.inner, length * si.inner,
                                         gx.data() + (o * si.extent + begin) * si.inner);
                           t.accumulate(ix, std::move(gx));
                         },
                         "slice");
}

/// Appends `extra` zero slices at the end of `axis`.
template <class T>
Var<T> pad_end(const Var<T>& x, std::size_t axis, std::size_t extra) {
  if (extra == 0) return x;
  const Shape in_shape = x.shape();
  const auto si = detail::split_axis(in_shape, axis);
  Shape out_shape = in_shape;
  out_shape[axis] += extra;
  const std::size_t ext = out_shape[axis];
  Tensor<T> out(out_shape);
  for (std::size_t o = 0; o < si.outer; ++o)
    std::copy_n(x.value().data() + o * si.extent * si.inner, si.extent * si.inner, out.data() + o * ext * si.inner);
  const auto ix = x.id();
  return x.tape().record(std::move(out), {ix},
                         [ix, in_shape, si, ext](Tape<T>& t, const Tensor<T>& g) {
                           Tensor<T> gx(in_shape);
                           for (std::size_t o = 0; o < si.outer; ++o)
                             std::copy_n(g.data() + o * ext * si.inner, si.extent * si.inner,
                                         gx.data() + o * si.extent * si.inner);
                           t.accumulate(ix, std::move(gx));
                         },
                         "pad_end");
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape s) {
  Tensor<T> out = x.value().reshaped(s);
  const auto ix = x.id();
  const Shape in_shape = x.shape();
  return x.tape().record(std::move(out), {ix},
                         [ix, in_shape](Tape<T>& t, const Tensor<T>& g) { t.accumulate(ix, g.reshaped(in_shape)); },
                         "reshape");
}

}  // namespace dualcv
