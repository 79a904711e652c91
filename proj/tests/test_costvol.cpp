#include <gtest/gtest.h>

#include "dualcv/costvol.hpp"
#include "dualcv/costvol_oracle.hpp"
#include "dualcv/gradcheck.hpp"
#include "dualcv/ops/elementwise.hpp"
#include "oracles.hpp"

using namespace dualcv;

namespace {

constexpr VolumeKind kKinds[] = {VolumeKind::gwc_dot, VolumeKind::gwc_sub, VolumeKind::norm_corr,
                                 VolumeKind::concat};

oracle::Cost as_oracle(VolumeKind k) {
  switch (k) {
    case VolumeKind::gwc_dot: return oracle::Cost::gwc_dot;
    case VolumeKind::gwc_sub: return oracle::Cost::gwc_sub;
    case VolumeKind::norm_corr: return oracle::Cost::norm_corr;
    case VolumeKind::concat: return oracle::Cost::concat;
  }
  return oracle::Cost::gwc_dot;
}

std::size_t channels_for(VolumeKind k) { return uses_compressed_features(k) ? 12 : 8; }

Tensor<double> build(VolumeKind k, const Tensor<double>& fl, const Tensor<double>& fr, std::size_t ng,
                     std::size_t dq) {
  Tape<double> tape;
  return build_volume(k, tape.constant(fl), tape.constant(fr), ng, dq).data.value();
}

}  // namespace

TEST(CostVolume, KindNamesRoundTrip) {
  for (auto k : kKinds) EXPECT_EQ(parse_volume_kind(to_string(k)), k);
  EXPECT_FALSE(parse_volume_kind("gwc").has_value());
}

TEST(CostVolume, MatchesOracleTenSeeds) {
  for (auto k : kKinds)
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const std::size_t C = channels_for(k);
      const auto fl = oracle::random({2, C, 8, 12}, 100 * seed + 1);
      const auto fr = oracle::random({2, C, 8, 12}, 100 * seed + 2);
      const auto got = build(k, fl, fr, 4, 6);
      EXPECT_LT(max_abs_diff(got, oracle::cost_volume(as_oracle(k), fl, fr, 4, 6)), 1e-6) << to_string(k);
      EXPECT_LT(max_abs_diff(got, cost_volume_oracle(k, fl, fr, 4, 6)), 1e-6) << to_string(k);
    }
}

TEST(CostVolume, ConcatIsExactGather) {
  const auto fl = oracle::random({1, 12, 5, 6}, 3), fr = oracle::random({1, 12, 5, 6}, 4);
  EXPECT_EQ(build(VolumeKind::concat, fl, fr, 1, 3), oracle::cost_volume(oracle::Cost::concat, fl, fr, 1, 3));
}

TEST(CostVolume, ShapeContract) {
  const auto f8 = oracle::random({2, 8, 4, 10}, 5), f12 = oracle::random({2, 12, 4, 10}, 6);
  EXPECT_EQ(build(VolumeKind::gwc_dot, f8, f8, 4, 3).shape(), (Shape{2, 4, 3, 4, 10}));
  EXPECT_EQ(build(VolumeKind::gwc_sub, f8, f8, 2, 5).shape(), (Shape{2, 2, 5, 4, 10}));
  EXPECT_EQ(build(VolumeKind::norm_corr, f12, f12, 4, 3).shape(), (Shape{2, 1, 3, 4, 10}));
  EXPECT_EQ(build(VolumeKind::concat, f12, f12, 4, 3).shape(), (Shape{2, 24, 3, 4, 10}));
}

TEST(CostVolume, OutOfFrameIsZero) {
  for (auto k : kKinds) {
    const std::size_t C = channels_for(k);
    const auto v = build(k, oracle::random({1, C, 3, 5}, 7, 1, 2), oracle::random({1, C, 3, 5}, 8, 1, 2), 4, 4);
    for (std::size_t c = 0; c < v.extent(1); ++c)
      for (std::size_t d = 0; d < 4; ++d)
        for (std::size_t y = 0; y < 3; ++y)
          for (std::size_t x = 0; x < d; ++x) EXPECT_EQ(v.at(0, c, d, y, x), 0.0) << to_string(k);
  }
}

TEST(CostVolume, GwcDotOnesAndSingletonGroups) {
  const Tensor<double> ones(Shape{1, 8, 3, 4}, 1.0);
  const auto v = build(VolumeKind::gwc_dot, ones, ones, 4, 2);
  for (std::size_t g = 0; g < 4; ++g)
    for (std::size_t i = 0; i < 12; ++i) EXPECT_DOUBLE_EQ(v[(g * 2) * 12 + i], 1.0);
  const auto fl = oracle::random({1, 4, 2, 3}, 9), fr = oracle::random({1, 4, 2, 3}, 10);
  const auto s = build(VolumeKind::gwc_dot, fl, fr, 4, 1);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t x = 0; x < 3; ++x)
        EXPECT_NEAR(s.at(0, c, 0, y, x), fl.at(0, c, y, x) * fr.at(0, c, y, x), 1e-12);
}

TEST(CostVolume, GwcSubIdenticalAndNonnegative) {
  const auto f = oracle::random({1, 8, 4, 6}, 11);
  const auto v = build(VolumeKind::gwc_sub, f, f, 4, 3);
  for (std::size_t g = 0; g < 4; ++g)
    for (std::size_t i = 0; i < 24; ++i) EXPECT_EQ(v[g * 3 * 24 + i], 0.0);
  const auto diff = build(VolumeKind::gwc_sub, f, oracle::random({1, 8, 4, 6}, 12), 4, 3);
  for (double e : diff.values()) EXPECT_GE(e, 0.0);
}

TEST(CostVolume, NormCorrIdentityNegationBounds) {
  const auto f = oracle::random({1, 12, 3, 5}, 13);
  Tensor<double> neg = f;
  for (auto& v : neg.values()) v = -v;
  const auto same = build(VolumeKind::norm_corr, f, f, 1, 2);
  const auto opp = build(VolumeKind::norm_corr, f, neg, 1, 2);
  for (std::size_t i = 0; i < 15; ++i) {
    EXPECT_NEAR(same[i], 1.0, 1e-12);
    EXPECT_NEAR(opp[i], -1.0, 1e-12);
  }
  const auto other = build(VolumeKind::norm_corr, f, oracle::random({1, 12, 3, 5}, 14), 1, 5);
  for (double v : other.values()) {
    EXPECT_GE(v, -1 - 1e-6);
    EXPECT_LE(v, 1 + 1e-6);
  }
}

TEST(CostVolume, NormCorrZeroFeaturesStayFinite) {
  const Tensor<double> z(Shape{1, 12, 2, 4});
  const auto v0 = build(VolumeKind::norm_corr, z, z, 1, 2);
  for (double v : v0.values()) EXPECT_EQ(v, 0.0);
}

TEST(CostVolume, ConcatRightHalfAtZeroDisparity) {
  const auto fl = oracle::random({1, 12, 3, 4}, 15), fr = oracle::random({1, 12, 3, 4}, 16);
  const auto v = build(VolumeKind::concat, fl, fr, 1, 2);
  for (std::size_t c = 0; c < 12; ++c)
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 4; ++x) {
        EXPECT_EQ(v.at(0, 12 + c, 0, y, x), fr.at(0, c, y, x));
        EXPECT_EQ(v.at(0, c, 0, y, x), fl.at(0, c, y, x));
      }
}

TEST(CostVolume, ScalingProperty) {
  const double alpha = 2.5;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto fl = oracle::random({1, 12, 4, 6}, seed + 20), fr = oracle::random({1, 12, 4, 6}, seed + 40);
    auto sl = fl, sr = fr;
    for (auto& v : sl.values()) v *= alpha;
    for (auto& v : sr.values()) v *= alpha;
    for (auto k : {VolumeKind::gwc_dot, VolumeKind::gwc_sub}) {
      auto a = build(k, fl, fr, 3, 4);
      for (auto& v : a.values()) v *= alpha * alpha;
      EXPECT_LT(max_abs_diff(a, build(k, sl, sr, 3, 4)), 1e-9);
    }
    EXPECT_LT(max_abs_diff(build(VolumeKind::norm_corr, fl, fr, 1, 4), build(VolumeKind::norm_corr, sl, sr, 1, 4)),
              1e-6);
  }
}

TEST(CostVolume, Rejections) {
  Tape<double> tape;
  auto f8 = tape.constant(oracle::random({1, 8, 2, 4}, 50));
  auto f12 = tape.constant(oracle::random({1, 12, 2, 4}, 51));
  EXPECT_THROW(build_gwc_dot(f8, f8, 3, 2), ShapeError);
  EXPECT_THROW(build_gwc_sub(f8, f8, 3, 2), ShapeError);
  EXPECT_THROW(build_gwc_dot(f8, f8, 4, 0), ShapeError);
  EXPECT_THROW(build_norm_corr(f8, f8, 2), ShapeError);
  EXPECT_THROW(build_concat(f8, f8, 2), ShapeError);
  EXPECT_THROW(build_concat(f12, tape.constant(oracle::random({1, 12, 2, 5}, 52)), 2), ShapeError);
}

TEST(CostVolume, GradientsAllKinds) {
  GradCheckOptions opt;
  for (auto k : kKinds) {
    const std::size_t C = channels_for(k);
    const auto other = oracle::random({1, C, 3, 5}, 60);
    const auto probe_seed = 61;
    for (int side = 0; side < 2; ++side) {
      auto r = grad_check(
          [&](Tape<double>& t, const Var<double>& x) {
            auto o = t.constant(other);
            auto v = side ? build_volume(k, o, x, 4, 3).data : build_volume(k, x, o, 4, 3).data;
            return sum(mul(v, t.constant(oracle::random(v.shape(), probe_seed))));
          },
          oracle::random({1, C, 3, 5}, 62), opt);
      EXPECT_LT(r.max_rel_error, 1e-4) << to_string(k) << " side " << side;
    }
  }
}
