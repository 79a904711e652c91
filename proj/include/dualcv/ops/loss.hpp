#pragma once

#include <cmath>

#include "dualcv/tape.hpp"

namespace dualcv {

/// Masked mean of the smooth-L1 (Huber, beta 1) penalty of pred - target.
/// Zero when the mask selects nothing. `mask` entries are 0 or 1.
template <class T>
Var<T> smooth_l1(const Var<T>& pred, const Tensor<T>& target, const Tensor<T>& mask) {
  pred.value().require_same_shape(target, "smooth_l1 target");
  pred.value().require_same_shape(mask, "smooth_l1 mask");
  const auto& p = pred.value();
  double acc = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (mask[i] == T{0}) continue;
    const double e = static_cast<double>(p[i]) - static_cast<double>(target[i]);
    const double a = std::abs(e);
    acc += a < 1.0 ? 0.5 * e * e : a - 0.5;
    ++count;
  }
  const T value = count ? static_cast<T>(acc / static_cast<double>(count)) : T{0};
  const auto ip = pred.id();
  return pred.tape().record(Tensor<T>::scalar(value), {ip},
                            [ip, target, mask, count](Tape<T>& t, const Tensor<T>& g) {
                              const auto& pv = t.value(ip);
                              Tensor<T> gp(pv.shape());
                              if (count) {
                                const T k = g[0] / static_cast<T>(count);
                                for (std::size_t i = 0; i < pv.size(); ++i) {
                                  if (mask[i] == T{0}) continue;
                                  const T e = pv[i] - target[i];
                                  gp[i] = k * (std::abs(e) < T{1} ? e : (e > T{0} ? T{1} : T{-1}));
                                }
                              }
                              t.accumulate(ip, std::move(gp));
                            },
                            "smooth_l1");
}

}  // namespace dualcv
