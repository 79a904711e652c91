#pragma once

#include <array>
#include <string>
#include <vector>

#include "dualcv/costvol.hpp"
#include "dualcv/nn/params.hpp"

namespace dualcv {

struct BackboneConfig {
  std::size_t stem_channels = 16;
  /// Channels of the three quarter-resolution scales (s2, s3, s4).
  std::array<std::size_t, 3> scale_channels{16, 16, 16};
  /// Residual blocks in the half-resolution stage and the three quarter stages.
  std::array<std::size_t, 4> blocks{1, 1, 1, 1};
  /// Dilations of the last two stages.
  std::array<std::size_t, 2> dilations{1, 2};
  std::size_t compressed_channels = kCompressedChannels;

  std::size_t total_channels() const { return scale_channels[0] + scale_channels[1] + scale_channels[2]; }

  static BackboneConfig toy() { return {}; }
  static BackboneConfig full() { return BackboneConfig{32, {64, 128, 128}, {3, 16, 3, 3}, {1, 2}, 12}; }
};

template <class T>
struct FeatureBundle {
  Var<T> s2, s3, s4;
  Var<T> cat;         // channel concatenation of s2, s3, s4
  Var<T> compressed;  // 12-channel compression of cat
};

/// PSMNet-style basic block: two 3x3 convs with a projected shortcut when the
/// stride or width changes. No activation after the sum.
template <class T>
struct ResidualBlock {
  ConvBn<T> a, b;
  std::optional<ConvBn<T>> shortcut;

  static ResidualBlock make(Builder<T>& bld, const std::string& name, std::size_t in, std::size_t out,
                            std::size_t stride, std::size_t dilation) {
    ResidualBlock r{ConvBn<T>::make(bld, name + ".a", {out, in, 3, 3}, ConvSpec::planar(stride, dilation, dilation)),
                    ConvBn<T>::make(bld, name + ".b", {out, out, 3, 3}, ConvSpec::planar(1, dilation, dilation), false),
                    std::nullopt};
    if (stride != 1 || in != out)
      r.shortcut = ConvBn<T>::make(bld, name + ".shortcut", {out, in, 1, 1}, ConvSpec::planar(stride, 0), false);
    return r;
  }

  Var<T> operator()(Context<T>& ctx, const Var<T>& x) const {
    auto y = b(ctx, a(ctx, x));
    return add(y, shortcut ? (*shortcut)(ctx, x) : x);
  }
};

template <class T>
class Backbone {
 public:
  Backbone() = default;

  Backbone(Builder<T>& bld, const BackboneConfig& cfg) : cfg_(cfg) {
    const std::size_t c1 = cfg.stem_channels;
    stem_.push_back(ConvBn<T>::make(bld, "backbone.stem0", {c1, 3, 3, 3}, ConvSpec::planar(2, 1)));
    stem_.push_back(ConvBn<T>::make(bld, "backbone.stem1", {c1, c1, 3, 3}, ConvSpec::planar(1, 1)));
    stem_.push_back(ConvBn<T>::make(bld, "backbone.stem2", {c1, c1, 3, 3}, ConvSpec::planar(1, 1)));
    auto stage = [&](std::vector<ResidualBlock<T>>& dst, const std::string& name, std::size_t in, std::size_t out,
                     std::size_t n, std::size_t stride, std::size_t dil) {
      for (std::size_t i = 0; i < n; ++i)
        dst.push_back(ResidualBlock<T>::make(bld, name + "." + std::to_string(i), i ? out : in, out,
                                             i ? 1 : stride, dil));
    };
    const auto [c2, c3, c4] = cfg.scale_channels;
    stage(half_, "backbone.half", c1, c1, cfg.blocks[0], 1, 1);
    stage(s2_, "backbone.s2", c1, c2, cfg.blocks[1], 2, 1);
    stage(s3_, "backbone.s3", c2, c3, cfg.blocks[2], 1, cfg.dilations[0]);
    stage(s4_, "backbone.s4", c3, c4, cfg.blocks[3], 1, cfg.dilations[1]);
    compress_ = ConvBn<T>::make(bld, "backbone.compress", {cfg.compressed_channels, cfg.total_channels(), 3, 3},
                                ConvSpec::planar(1, 1));
  }

  const BackboneConfig& config() const { return cfg_; }

  /// Shared-weight features of both views. Left and right run as one batch.
  std::pair<FeatureBundle<T>, FeatureBundle<T>> extract(Context<T>& ctx, const Var<T>& left,
                                                        const Var<T>& right) const {
    if (left.shape() != right.shape())
      fail_shape("extract: left ", to_string(left.shape()), " and right ", to_string(right.shape()), " differ");
    const auto& s = left.shape();
    if (s.size() != 4 || s[1] != 3) fail_shape("extract: images must be [B,3,H,W], got ", to_string(s));
    if (s[2] % 4 || s[3] % 4)
      fail_shape("extract: image extents ", s[2], "x", s[3], " must be multiples of 4");
    const std::size_t B = s[0];
    auto both = run(ctx, concat<T>({left, right}, 0));
    auto half = [&](const Var<T>& v, bool second) { return slice(v, 0, second ? B : 0, B); };
    FeatureBundle<T> l{half(both.s2, false), half(both.s3, false), half(both.s4, false),
                       half(both.cat, false), half(both.compressed, false)};
    FeatureBundle<T> r{half(both.s2, true), half(both.s3, true), half(both.s4, true), half(both.cat, true),
                       half(both.compressed, true)};
    return {l, r};
  }

  /// Single-view pass.
  FeatureBundle<T> run(Context<T>& ctx, const Var<T>& img) const {
    auto x = img;
    for (const auto& c : stem_) x = c(ctx, x);
    for (const auto& b : half_) x = b(ctx, x);
    for (const auto& b : s2_) x = b(ctx, x);
    auto f2 = x;
    for (const auto& b : s3_) x = b(ctx, x);
    auto f3 = x;
    for (const auto& b : s4_) x = b(ctx, x);
    auto f4 = x;
    auto cat = concat<T>({f2, f3, f4}, 1);
    return {f2, f3, f4, cat, compress(ctx, cat)};
  }

  /// 3x3 conv + batch norm + leaky ReLU from total_channels to 12.
  Var<T> compress(Context<T>& ctx, const Var<T>& cat) const {
    if (cat.shape().size() != 4 || cat.shape()[1] != cfg_.total_channels())
      fail_shape("compress: expected ", cfg_.total_channels(), " input channels, got ", to_string(cat.shape()));
    return compress_(ctx, cat);
  }

 private:
  BackboneConfig cfg_;
  std::vector<ConvBn<T>> stem_;
  std::vector<ResidualBlock<T>> half_, s2_, s3_, s4_;
  ConvBn<T> compress_;
};

}  // namespace dualcv
