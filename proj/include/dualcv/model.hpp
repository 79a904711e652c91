#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "dualcv/aggregation.hpp"
#include "dualcv/backbone.hpp"
#include "dualcv/costvol.hpp"
#include "dualcv/metrics.hpp"
#include "dualcv/regression.hpp"

namespace dualcv {

struct ModelConfig {
  BackboneConfig backbone = BackboneConfig::toy();
  HourglassConfig hourglass;
  std::size_t dmax = 48;
  std::size_t groups = 4;
  VolumeKind upper = VolumeKind::gwc_dot;
  /// Empty for the single-volume variant.
  std::optional<VolumeKind> lower = VolumeKind::norm_corr;
  std::size_t topk = 2;
  std::size_t spx_hidden = 32;
  std::uint64_t seed = 1;

  std::size_t disparities() const { return dmax / 4; }
  /// Disparity levels seen by the hourglass: the next multiple of 8.
  std::size_t padded_disparities() const { return (disparities() + 7) / 8 * 8; }

  void validate() const {
    if (dmax == 0 || dmax % 4) throw std::invalid_argument("dmax must be a positive multiple of 4");
    if (groups == 0 || backbone.total_channels() % groups)
      throw std::invalid_argument("total feature channels " + std::to_string(backbone.total_channels()) +
                                  " not divisible by groups " + std::to_string(groups));
    if (lower && *lower == upper) throw std::invalid_argument("upper and lower volume kinds must differ");
    if (topk < 1 || topk > disparities()) throw std::invalid_argument("topk must lie in [1, dmax/4]");
  }
};

/// Per-image, per-channel zero mean and unit variance ([B,3,H,W]).
template <class T>
Tensor<T> standardize_images(const Tensor<T>& img) {
  const auto& s = img.shape();
  if (s.size() != 4) fail_shape("standardize_images: expected [B,C,H,W], got ", to_string(s));
  const std::size_t planes = s[0] * s[1], n = s[2] * s[3];
  Tensor<T> out(s);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* x = img.data() + p * n;
    double m = 0, v = 0;
    for (std::size_t i = 0; i < n; ++i) m += x[i];
    m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) v += (x[i] - m) * (x[i] - m);
    const double inv = 1.0 / std::sqrt(v / static_cast<double>(n) + 1e-6);
    T* y = out.data() + p * n;
    for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<T>((x[i] - m) * inv);
  }
  return out;
}

template <class T>
struct Prediction {
  Var<T> d0;   // [B, H/4, W/4], disparity-index units
  Var<T> d1;   // [B, H, W], pixels
  Var<T> agg;  // [B, 1, Dq, H/4, W/4]
};

/// Backbone -> two cost volumes -> coupled dual hourglass -> top-k regression
/// -> superpixel upsampling.
template <class T>
class StereoModel {
 public:
  explicit StereoModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    Builder<T> b(params_, cfg.seed);
    backbone_ = Backbone<T>(b, cfg.backbone);
    auto in_ch = [&](VolumeKind k) { return volume_channels(k, cfg.groups); };
    std::optional<std::size_t> lower_ch;
    if (cfg.lower) lower_ch = in_ch(*cfg.lower);
    aggregation_ = DualAggregation<T>(b, in_ch(cfg.upper), lower_ch, cfg.hourglass);
    spx_ = SuperpixelHead<T>(b, cfg.backbone.total_channels(), cfg.spx_hidden);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  const Backbone<T>& backbone() const { return backbone_; }

  /// Rejects images whose extents cannot pass the quarter-resolution hourglass.
  static void validate_images(const Shape& s) {
    if (s.size() != 4 || s[1] != 3) fail_shape("images must be [B,3,H,W], got ", to_string(s));
    if (s[2] % 32 || s[3] % 32)
      fail_shape("image extents ", s[2], "x", s[3], " must be multiples of 32");
  }

  Prediction<T> forward(Context<T>& ctx, const Var<T>& left, const Var<T>& right) const {
    validate_images(left.shape());
    // Inputs are data, not parameters: they are standardized as constants.
    auto [fl, fr] = backbone_.extract(ctx, ctx.tape.constant(standardize_images(left.value())),
                                      ctx.tape.constant(standardize_images(right.value())));
    const std::size_t dq = cfg_.disparities(), dpad = cfg_.padded_disparities();
    auto volume = [&](VolumeKind k) {
      const bool compressed = uses_compressed_features(k);
      auto cv = build_volume(k, compressed ? fl.compressed : fl.cat, compressed ? fr.compressed : fr.cat,
                             cfg_.groups, dq);
      return pad_end(cv.data, 2, dpad - dq);
    };
    auto upper = volume(cfg_.upper);
    std::optional<Var<T>> lower;
    if (cfg_.lower) lower = volume(*cfg_.lower);
    auto agg = slice(aggregation_(ctx, upper, lower), 2, 0, dq);
    auto d0 = topk_regress(agg, cfg_.topk);
    auto d1 = superpixel_upsample(d0, spx_(ctx, fl.cat));
    return {d0, d1, agg};
  }

 private:
  ModelConfig cfg_;
  ParamSet<T> params_;
  Backbone<T> backbone_;
  DualAggregation<T> aggregation_;
  SuperpixelHead<T> spx_;
};

}  // namespace dualcv
