#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "dualcv/nn/params.hpp"

namespace dualcv {

struct HourglassConfig {
  /// Channels of encoder levels 1..3; the input projection uses the first.
  std::array<std::size_t, 3> channels{8, 16, 32};
  /// Couple after the first / second / third decoder stage.
  std::array<bool, 3> coupling{true, true, true};
  bool skips = true;
};

/// Decoder outputs per scale, coarsest first: extents /4, /2, /1 of the volume.
template <class T>
using GeometryFeatures = std::array<Var<T>, 3>;

/// Encoder outputs: the input projection followed by the three levels.
template <class T>
struct EncoderLevels {
  Var<T> projected;
  std::array<Var<T>, 3> levels;
};

inline void require_hourglass_extents(const Shape& s) {
  if (s.size() != 5) fail_shape("hourglass: expected [B,C,D,H,W], got ", to_string(s));
  for (std::size_t a = 2; a < 5; ++a)
    if (s[a] % 8 != 0)
      fail_shape("hourglass: volume extents ", s[2], "x", s[3], "x", s[4],
                 " must be multiples of 8 (three stride-2 levels)");
}

/// G_fused = f1(f2(G_l) + G_u) + G_l with f1, f2 1x3x3 convolutions that
/// preserve shape.
template <class T>
Var<T> couple(const Var<T>& upper, const Var<T>& lower, const Var<T>& f1_w, const Var<T>& f1_b, const Var<T>& f2_w,
              const Var<T>& f2_b) {
  if (upper.shape() != lower.shape())
    fail_shape("couple: upper ", to_string(upper.shape()), " and lower ", to_string(lower.shape()), " differ");
  const ConvSpec s{{1, 1, 1}, {0, 1, 1}, {1, 1, 1}};
  for (const auto* w : {&f1_w, &f2_w})
    if (w->shape().size() != 5 || (*w).shape()[2] != 1 || (*w).shape()[3] != 3 || (*w).shape()[4] != 3)
      fail_shape("couple: kernels must be [C,C,1,3,3], got ", to_string(w->shape()));
  auto inner = add(conv3d(lower, f2_w, std::optional<Var<T>>(f2_b), s), upper);
  return add(conv3d(inner, f1_w, std::optional<Var<T>>(f1_b), s), lower);
}

template <class T>
struct CouplingModule {
  ConvLayer<T> f1, f2;

  static CouplingModule make(Builder<T>& b, const std::string& name, std::size_t channels) {
    const ConvSpec s{{1, 1, 1}, {0, 1, 1}, {1, 1, 1}};
    return {ConvLayer<T>::make(b, name + ".f1", {channels, channels, 1, 3, 3}, s, true),
            ConvLayer<T>::make(b, name + ".f2", {channels, channels, 1, 3, 3}, s, true)};
  }

  Var<T> operator()(Context<T>& ctx, const Var<T>& upper, const Var<T>& lower) const {
    return couple(upper, lower, ctx(f1.weight), ctx(*f1.bias), ctx(f2.weight), ctx(*f2.bias));
  }
};

/// One 3-D hourglass: input projection, three stride-2 encoder levels,
/// three transposed-conv decoder stages with additive skips, 1-channel head.
template <class T>
class Hourglass {
 public:
  Hourglass() = default;

  Hourglass(Builder<T>& b, const std::string& name, std::size_t in_channels, const HourglassConfig& cfg)
      : cfg_(cfg) {
    const auto& c = cfg.channels;
    const auto k3 = ConvSpec::uniform(1, 1);
    proj_ = ConvBn<T>::make(b, name + ".proj", {c[0], in_channels, 3, 3, 3}, k3);
    std::size_t prev = c[0];
    for (std::size_t l = 0; l < 3; ++l) {
      down_[l] = ConvBn<T>::make(b, name + ".enc" + std::to_string(l) + ".down", {c[l], prev, 3, 3, 3},
                                 ConvSpec::uniform(2, 1));
      same_[l] = ConvBn<T>::make(b, name + ".enc" + std::to_string(l) + ".conv", {c[l], c[l], 3, 3, 3}, k3);
      prev = c[l];
    }
    // Decoder stage s restores level (1 - s) extents; stage 2 restores the projection.
    for (std::size_t s = 0; s < 3; ++s) {
      const std::size_t in = c[2 - s], out = s < 2 ? c[1 - s] : c[0];
      up_[s] = ConvBn<T>::make(b, name + ".dec" + std::to_string(s) + ".up", {in, out, 4, 4, 4},
                               ConvSpec::uniform(2, 1), false, true);
      post_[s] = ConvBn<T>::make(b, name + ".dec" + std::to_string(s) + ".conv", {out, out, 3, 3, 3}, k3);
    }
    head_ = ConvLayer<T>::make(b, name + ".head", {1, c[0], 3, 3, 3}, k3, true);
  }

  const HourglassConfig& config() const { return cfg_; }

  /// Channels of decoder stage s output.
  std::size_t stage_channels(std::size_t s) const { return s < 2 ? cfg_.channels[1 - s] : cfg_.channels[0]; }

  EncoderLevels<T> encode(Context<T>& ctx, const Var<T>& volume) const {
    require_hourglass_extents(volume.shape());
    EncoderLevels<T> e;
    e.projected = proj_(ctx, volume);
    auto x = e.projected;
    for (std::size_t l = 0; l < 3; ++l) {
      x = same_[l](ctx, down_[l](ctx, x));
      e.levels[l] = x;
    }
    return e;
  }

  /// Decoder stage s (0..2) applied to the previous stage output.
  Var<T> decode_stage(Context<T>& ctx, std::size_t s, const Var<T>& x, const EncoderLevels<T>& enc) const {
    auto up = up_[s](ctx, x);
    if (cfg_.skips) {
      const Var<T>& skip = s < 2 ? enc.levels[1 - s] : enc.projected;
      if (skip.shape() != up.shape())
        fail_shape("decode: skip ", to_string(skip.shape()), " vs decoder ", to_string(up.shape()));
      up = add(up, skip);
    }
    return post_[s](ctx, leaky_relu(up, T(0.01)));
  }

  GeometryFeatures<T> decode(Context<T>& ctx, const EncoderLevels<T>& enc) const {
    GeometryFeatures<T> g;
    auto x = enc.levels[2];
    for (std::size_t s = 0; s < 3; ++s) g[s] = x = decode_stage(ctx, s, x, enc);
    return g;
  }

  Var<T> head(Context<T>& ctx, const Var<T>& g) const { return head_(ctx, g); }

 private:
  HourglassConfig cfg_;
  ConvBn<T> proj_;
  std::array<ConvBn<T>, 3> down_, same_, up_, post_;
  ConvLayer<T> head_;
};

/// Upper and lower hourglasses; the lower decoder is coupled with the upper
/// decoder output at each masked scale. Output: upper head + lower head.
/// Without a lower volume only the upper branch runs.
template <class T>
class DualAggregation {
 public:
  DualAggregation() = default;

  DualAggregation(Builder<T>& b, std::size_t upper_channels, std::optional<std::size_t> lower_channels,
                  const HourglassConfig& cfg)
      : cfg_(cfg), upper_(b, "agg.upper", upper_channels, cfg) {
    if (lower_channels) {
      lower_.emplace(b, "agg.lower", *lower_channels, cfg);
      for (std::size_t s = 0; s < 3; ++s)
        if (cfg.coupling[s])
          coupling_[s] = CouplingModule<T>::make(b, "agg.couple" + std::to_string(s), upper_.stage_channels(s));
    }
  }

  bool dual() const { return lower_.has_value(); }
  const HourglassConfig& config() const { return cfg_; }

  Var<T> operator()(Context<T>& ctx, const Var<T>& upper_vol, const std::optional<Var<T>>& lower_vol) const {
    if (dual() != lower_vol.has_value())
      fail_shape("dual_aggregate: lower volume ", lower_vol ? "given to a single-branch model" : "missing");
    const auto eu = upper_.encode(ctx, upper_vol);
    const auto gu = upper_.decode(ctx, eu);
    auto out = upper_.head(ctx, gu[2]);
    if (!lower_vol) return out;
    const auto& us = upper_vol.shape();
    const auto& ls = lower_vol->shape();
    if (us[0] != ls[0] || us[2] != ls[2] || us[3] != ls[3] || us[4] != ls[4])
      fail_shape("dual_aggregate: upper ", to_string(us), " and lower ", to_string(ls), " extents differ");
    const auto el = lower_->encode(ctx, *lower_vol);
    auto x = el.levels[2];
    for (std::size_t s = 0; s < 3; ++s) {
      x = lower_->decode_stage(ctx, s, x, el);
      if (coupling_[s]) x = (*coupling_[s])(ctx, gu[s], x);
    }
    return add(out, lower_->head(ctx, x));
  }

 private:
  HourglassConfig cfg_;
  Hourglass<T> upper_;
  std::optional<Hourglass<T>> lower_;
  std::array<std::optional<CouplingModule<T>>, 3> coupling_;
};

}  // namespace dualcv
