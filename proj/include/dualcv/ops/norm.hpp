#pragma once

#include <cmath>

#include "dualcv/tape.hpp"

namespace dualcv {

enum class Mode { train, eval };

struct BatchNormOptions {
  double eps = 1e-5;
  double momentum = 0.1;
};

/// Per-channel normalisation over every axis except axis 1.
/// Train mode uses batch statistics and updates the running buffers in place;
/// eval mode uses the running buffers.
template <class T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, Mode mode, BatchNormOptions opt = {}) {
  const Shape& s = x.shape();
  if (s.size() < 2) fail_shape("batch_norm: rank must be >= 2, got ", to_string(s));
  const std::size_t B = s[0], C = s[1];
  const std::size_t inner = x.value().size() / (B * C);
  const Shape cs{C};
  if (gamma.shape() != cs || beta.shape() != cs || running_mean.shape() != cs || running_var.shape() != cs)
    fail_shape("batch_norm: per-channel parameters must have shape [", C, "]");
  const std::size_t n = B * inner;
  const T* xv = x.value().data();

  Tensor<T> mean(cs), inv_std(cs);
  if (mode == Mode::train) {
    for (std::size_t c = 0; c < C; ++c) {
      double m = 0;
      for (std::size_t b = 0; b < B; ++b) {
        const T* p = xv + (b * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) m += p[i];
      }
      m /= static_cast<double>(n);
      double v = 0;
      for (std::size_t b = 0; b < B; ++b) {
        const T* p = xv + (b * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) v += (p[i] - m) * (p[i] - m);
      }
      const double var = v / static_cast<double>(n);
      mean[c] = static_cast<T>(m);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + opt.eps));
      const double unbiased = n > 1 ? v / static_cast<double>(n - 1) : var;
      running_mean[c] = static_cast<T>((1 - opt.momentum) * running_mean[c] + opt.momentum * m);
      running_var[c] = static_cast<T>((1 - opt.momentum) * running_var[c] + opt.momentum * unbiased);
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = running_mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[c]) + opt.eps));
    }
  }

  Tensor<T> xhat(s), y(s);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t off = (b * C + c) * inner;
      const T g = gamma.value()[c], bt = beta.value()[c], m = mean[c], is = inv_std[c];
      for (std::size_t i = 0; i < inner; ++i) {
        const T h = (xv[off + i] - m) * is;
        xhat[off + i] = h;
        y[off + i] = g * h + bt;
      }
    }

  const auto ix = x.id(), ig = gamma.id(), ib = beta.id();
  const bool train = mode == Mode::train;
  return x.tape().record(
      std::move(y), {ix, ig, ib},
      [ix, ig, ib, xhat = std::move(xhat), inv_std, B, C, inner, n, train](Tape<T>& t, const Tensor<T>& g) {
        const auto& gam = t.value(ig);
        Tensor<T> dgamma(Shape{C}), dbeta(Shape{C});
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t off = (b * C + c) * inner;
            T sg{0}, sgh{0};
            for (std::size_t i = 0; i < inner; ++i) {
              sg += g[off + i];
              sgh += g[off + i] * xhat[off + i];
            }
            dbeta[c] += sg;
            dgamma[c] += sgh;
          }
        if (t.requires_grad(ix)) {
          Tensor<T> gx(g.shape());
          const T inv_n = T{1} / static_cast<T>(n);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) {
              const std::size_t off = (b * C + c) * inner;
              const T k = gam[c] * inv_std[c];
              for (std::size_t i = 0; i < inner; ++i) {
                if (train)
                  gx[off + i] = k * (g[off + i] - inv_n * dbeta[c] - xhat[off + i] * inv_n * dgamma[c]);
                else
                  gx[off + i] = k * g[off + i];
              }
            }
          t.accumulate(ix, std::move(gx));
        }
        t.accumulate(ig, std::move(dgamma));
        t.accumulate(ib, std::move(dbeta));
      },
      "batch_norm");
}

}  // namespace dualcv
