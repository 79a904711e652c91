#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "dualcv/ops/elementwise.hpp"
#include "dualcv/ops/loss.hpp"

namespace dualcv {

/// Raised when a metric is requested over zero valid pixels.
class UndefinedReport : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct LossWeights {
  double lambda0 = 0.3;  // quarter-resolution term
  double lambda1 = 1.0;  // full-resolution term
};

/// Valid where 0 < d_gt < dmax (sparse ground truth stores 0 for "unknown").
template <class T>
Tensor<T> sparse_validity(const Tensor<T>& d_gt, double dmax) {
  Tensor<T> m(d_gt.shape());
  for (std::size_t i = 0; i < d_gt.size(); ++i)
    m[i] = (std::isfinite(d_gt[i]) && d_gt[i] > T{0} && d_gt[i] < dmax) ? T{1} : T{0};
  return m;
}

/// Top-left sample of every 4x4 cell, disparity divided by 4. Works on
/// [..., H, W] maps; the mask follows the same sampling.
template <class T>
std::pair<Tensor<T>, Tensor<T>> downsample_gt(const Tensor<T>& d_gt, const Tensor<T>& mask, std::size_t factor = 4) {
  d_gt.require_same_shape(mask, "downsample_gt");
  const auto& s = d_gt.shape();
  if (s.size() < 2) fail_shape("downsample_gt: need at least [H,W], got ", to_string(s));
  const std::size_t H = s[s.size() - 2], W = s.back();
  if (H % factor || W % factor) fail_shape("downsample_gt: ", H, "x", W, " not divisible by ", factor);
  Shape qs = s;
  qs[s.size() - 2] = H / factor;
  qs.back() = W / factor;
  const std::size_t planes = d_gt.size() / (H * W), h = H / factor, w = W / factor;
  Tensor<T> qd(qs), qm(qs);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t src = p * H * W + y * factor * W + x * factor;
        qd[p * h * w + y * w + x] = d_gt[src] / static_cast<T>(factor);
        qm[p * h * w + y * w + x] = mask[src];
      }
  return {qd, qm};
}

template <class T>
struct LossTerms {
  Var<T> total;
  T quarter = 0;  // unweighted smooth-L1 of d0
  T full = 0;     // unweighted smooth-L1 of d1
  bool empty_mask = false;
};

/// lambda0 * smoothL1(d0 - gt/4 @ 1/4) + lambda1 * smoothL1(d1 - gt), masked means.
/// d0 [B,H/4,W/4], d1/d_gt/mask [B,H,W].
template <class T>
LossTerms<T> total_loss(const Var<T>& d0, const Var<T>& d1, const Tensor<T>& d_gt, const Tensor<T>& mask,
                        const LossWeights& w = {}) {
  if (w.lambda0 < 0 || w.lambda1 < 0) throw std::invalid_argument("loss weights must be nonnegative");
  auto [q_gt, q_mask] = downsample_gt(d_gt, mask);
  auto l0 = smooth_l1(d0, q_gt, q_mask);
  auto l1 = smooth_l1(d1, d_gt, mask);
  LossTerms<T> r;
  r.quarter = l0.value()[0];
  r.full = l1.value()[0];
  r.total = add(scale(l0, static_cast<T>(w.lambda0)), scale(l1, static_cast<T>(w.lambda1)));
  bool any = false;
  for (auto v : mask.values()) any = any || v != T{0};
  r.empty_mask = !any;
  return r;
}

namespace detail {

template <class T, class F>
std::size_t for_valid(const Tensor<T>& d, const Tensor<T>& gt, const Tensor<T>& mask, F&& f) {
  d.require_same_shape(gt, "metric");
  d.require_same_shape(mask, "metric mask");
  std::size_t n = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (mask[i] == T{0}) continue;
    f(std::abs(static_cast<double>(d[i]) - static_cast<double>(gt[i])), static_cast<double>(gt[i]));
    ++n;
  }
  if (n == 0) throw UndefinedReport("metric undefined: no valid pixels");
  return n;
}

}  // namespace detail

/// Mean absolute disparity error over valid pixels.
template <class T>
double epe(const Tensor<T>& d, const Tensor<T>& gt, const Tensor<T>& mask) {
  double s = 0;
  const auto n = detail::for_valid(d, gt, mask, [&](double e, double) { s += e; });
  return s / static_cast<double>(n);
}

/// Percent of valid pixels whose error exceeds max(3, 0.05 * gt).
template <class T>
double d1_rate(const Tensor<T>& d, const Tensor<T>& gt, const Tensor<T>& mask) {
  std::size_t bad = 0;
  const auto n = detail::for_valid(d, gt, mask, [&](double e, double g) { bad += e > std::max(3.0, 0.05 * g); });
  return 100.0 * static_cast<double>(bad) / static_cast<double>(n);
}

/// Percent of valid pixels whose error exceeds sigma.
template <class T>
double bad_sigma(const Tensor<T>& d, const Tensor<T>& gt, const Tensor<T>& mask, double sigma) {
  if (!(sigma > 0)) throw std::invalid_argument("bad_sigma: sigma must be positive");
  std::size_t bad = 0;
  const auto n = detail::for_valid(d, gt, mask, [&](double e, double) { bad += e > sigma; });
  return 100.0 * static_cast<double>(bad) / static_cast<double>(n);
}

struct EvalReport {
  double epe = 0;
  double d1 = 0;
  std::map<double, double> bad;  // sigma -> percent
  std::size_t valid_pixels = 0;
};

template <class T>
EvalReport evaluate(const Tensor<T>& d, const Tensor<T>& gt, const Tensor<T>& mask,
                    const std::vector<double>& sigmas = {1.0, 2.0, 3.0}) {
  EvalReport r;
  r.epe = epe(d, gt, mask);
  r.d1 = d1_rate(d, gt, mask);
  for (double s : sigmas) r.bad[s] = bad_sigma(d, gt, mask, s);
  for (auto v : mask.values()) r.valid_pixels += v != T{0};
  return r;
}

/// Valid-pixel-weighted aggregate of per-sample reports.
inline EvalReport aggregate(const std::vector<EvalReport>& reports) {
  EvalReport r;
  for (const auto& x : reports) r.valid_pixels += x.valid_pixels;
  if (r.valid_pixels == 0) throw UndefinedReport("aggregate over zero valid pixels");
  const double n = static_cast<double>(r.valid_pixels);
  for (const auto& x : reports) {
    const double w = static_cast<double>(x.valid_pixels) / n;
    r.epe += w * x.epe;
    r.d1 += w * x.d1;
    for (const auto& [s, v] : x.bad) r.bad[s] += w * v;
  }
  return r;
}

}  // namespace dualcv
