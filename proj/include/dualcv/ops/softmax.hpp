#pragma once

#include <cmath>

#include "dualcv/ops/elementwise.hpp"

namespace dualcv {

/// Softmax along `axis`, max-subtracted.
template <class T>
Var<T> softmax_axis(const Var<T>& x, std::size_t axis) {
  const auto sp = detail::split_axis(x.shape(), axis);
  Tensor<T> y(x.shape());
  const T* xv = x.value().data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.extent * sp.inner + in;
      T m = xv[base];
      for (std::size_t k = 1; k < sp.extent; ++k) m = std::max(m, xv[base + k * sp.inner]);
      T z{0};
      for (std::size_t k = 0; k < sp.extent; ++k) {
        const T e = std::exp(xv[base + k * sp.inner] - m);
        y[base + k * sp.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < sp.extent; ++k) y[base + k * sp.inner] /= z;
    }
  const auto ix = x.id();
  Tensor<T> saved = y;
  return x.tape().record(std::move(y), {ix},
                         [ix, sp, saved = std::move(saved)](Tape<T>& t, const Tensor<T>& g) {
                           Tensor<T> gx(saved.shape());
                           for (std::size_t o = 0; o < sp.outer; ++o)
                             for (std::size_t in = 0; in < sp.inner; ++in) {
                               const std::size_t base = o * sp.extent * sp.inner + in;
                               T dot{0};
                               for (std::size_t k = 0; k < sp.extent; ++k)
                                 dot += g[base + k * sp.inner] * saved[base + k * sp.inner];
                               for (std::size_t k = 0; k < sp.extent; ++k) {
                                 const std::size_t i = base + k * sp.inner;
                                 gx[i] = saved[i] * (g[i] - dot);
                               }
                             }
                           t.accumulate(ix, std::move(gx));
                         },
                         "softmax");
}

}  // namespace dualcv
