#include <gtest/gtest.h>

#include "dualcv/aggregation.hpp"
#include "dualcv/gradcheck.hpp"
#include "oracles.hpp"

using namespace dualcv;

namespace {

const ConvSpec k133{{1, 1, 1}, {0, 1, 1}, {1, 1, 1}};

Tensor<double> couple_value(const Tensor<double>& gu, const Tensor<double>& gl, const Tensor<double>& f1w,
                            const Tensor<double>& f1b, const Tensor<double>& f2w, const Tensor<double>& f2b) {
  Tape<double> t;
  return couple(t.constant(gu), t.constant(gl), t.constant(f1w), t.constant(f1b), t.constant(f2w),
                t.constant(f2b))
      .value();
}

struct Agg {
  ParamSet<double> params;
  DualAggregation<double> agg;
  Agg(std::size_t cu, std::optional<std::size_t> cl, HourglassConfig cfg, std::uint64_t seed = 5) {
    Builder<double> b(params, seed);
    agg = DualAggregation<double>(b, cu, cl, cfg);
  }
  Tensor<double> run(const Tensor<double>& u, const std::optional<Tensor<double>>& l, Mode m = Mode::eval) {
    Tape<double> t;
    Context<double> ctx(t, params, m, false);
    std::optional<Var<double>> lv;
    if (l) lv = t.constant(*l);
    return agg(ctx, t.constant(u), lv).value();
  }
};

}  // namespace

TEST(Hourglass, LevelExtents) {
  ParamSet<double> params;
  Builder<double> b(params, 1);
  Hourglass<double> hg(b, "hg", 4, HourglassConfig{});
  Tape<double> t;
  Context<double> ctx(t, params, Mode::eval, false);
  auto enc = hg.encode(ctx, t.constant(oracle::random({1, 4, 16, 16, 32}, 2)));
  EXPECT_EQ(enc.projected.shape(), (Shape{1, 8, 16, 16, 32}));
  EXPECT_EQ(enc.levels[0].shape(), (Shape{1, 8, 8, 8, 16}));
  EXPECT_EQ(enc.levels[1].shape(), (Shape{1, 16, 4, 4, 8}));
  EXPECT_EQ(enc.levels[2].shape(), (Shape{1, 32, 2, 2, 4}));
  auto g = hg.decode(ctx, enc);
  EXPECT_EQ(g[0].shape(), (Shape{1, 16, 4, 4, 8}));
  EXPECT_EQ(g[1].shape(), (Shape{1, 8, 8, 8, 16}));
  EXPECT_EQ(g[2].shape(), (Shape{1, 8, 16, 16, 32}));
  EXPECT_EQ(hg.head(ctx, g[2]).shape(), (Shape{1, 1, 16, 16, 32}));
}

TEST(Hourglass, TwelveDisparityLevelsRejected) {
  ParamSet<double> params;
  Builder<double> b(params, 1);
  Hourglass<double> hg(b, "hg", 4, HourglassConfig{});
  Tape<double> t;
  Context<double> ctx(t, params, Mode::eval, false);
  try {
    hg.encode(ctx, t.constant(Tensor<double>(Shape{1, 4, 12, 16, 32})));
    FAIL() << "expected rejection";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("multiples of 8"), std::string::npos);
  }
}

TEST(Hourglass, ShapeRoundTripOverValidExtents) {
  for (auto [d, h, w] : {std::tuple{8, 8, 8}, std::tuple{16, 8, 24}, std::tuple{8, 16, 32}}) {
    Agg a(2, 1, HourglassConfig{{4, 4, 4}, {true, false, true}, true});
    auto y = a.run(oracle::random({1, 2, std::size_t(d), std::size_t(h), std::size_t(w)}, 3),
                   oracle::random({1, 1, std::size_t(d), std::size_t(h), std::size_t(w)}, 4));
    EXPECT_EQ(y.shape(), (Shape{1, 1, std::size_t(d), std::size_t(h), std::size_t(w)}));
  }
}

TEST(DualAggregation, ZeroInputGivesZeroInEvalMode) {
  Agg a(4, 1, HourglassConfig{});
  auto y = a.run(Tensor<double>(Shape{1, 4, 8, 8, 16}), Tensor<double>(Shape{1, 1, 8, 8, 16}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(DualAggregation, SkipsAreWired) {
  HourglassConfig with, without;
  without.skips = false;
  Agg a(4, 1, with), b(4, 1, without);
  const auto u = oracle::random({1, 4, 8, 8, 16}, 6), l = oracle::random({1, 1, 8, 8, 16}, 7);
  EXPECT_GT(max_abs_diff(a.run(u, l), b.run(u, l)), 1e-6);
}

TEST(DualAggregation, ShapesForEveryCouplingMask) {
  const auto u = oracle::random({2, 4, 8, 8, 16}, 8), l = oracle::random({2, 24, 8, 8, 16}, 9);
  for (int m = 0; m < 8; ++m) {
    HourglassConfig cfg;
    cfg.coupling = {(m & 1) != 0, (m & 2) != 0, (m & 4) != 0};
    Agg a(4, 24, cfg);
    EXPECT_EQ(a.run(u, l, Mode::train).shape(), (Shape{2, 1, 8, 8, 16}));
  }
  Agg single(4, std::nullopt, HourglassConfig{});
  EXPECT_FALSE(single.agg.dual());
  EXPECT_EQ(single.run(u, std::nullopt).shape(), (Shape{2, 1, 8, 8, 16}));
  EXPECT_THROW(single.run(u, l), ShapeError);
}

TEST(DualAggregation, CouplingParametersFollowMask) {
  auto names = [](std::array<bool, 3> mask) {
    HourglassConfig cfg;
    cfg.coupling = mask;
    Agg a(4, 1, cfg);
    std::vector<std::string> out;
    for (const auto& e : a.params)
      if (e.name.rfind("agg.couple", 0) == 0 && e.name.find("weight") != std::string::npos) out.push_back(e.name);
    return out;
  };
  EXPECT_TRUE(names({false, false, false}).empty());
  EXPECT_EQ(names({true, false, false}), (std::vector<std::string>{"agg.couple0.f1.weight", "agg.couple0.f2.weight"}));
  EXPECT_EQ(names({true, true, true}).size(), 6u);
}

TEST(DualAggregation, UncoupledSumsIndependentBranches) {
  // Without coupling the output is upper head + lower head, each computed alone.
  HourglassConfig cfg;
  cfg.coupling = {false, false, false};
  Agg a(4, 1, cfg);
  const auto u = oracle::random({1, 4, 8, 8, 8}, 10), l = oracle::random({1, 1, 8, 8, 8}, 11);
  Tensor<double> zero_l(l.shape());
  const auto both = a.run(u, l);
  const auto upper_only = a.run(u, zero_l);  // lower branch of zeros contributes exactly 0
  Agg lower_only_model(4, 1, cfg);
  const auto lower_only = lower_only_model.run(Tensor<double>(u.shape()), l);
  Tensor<double> sum_ = upper_only;
  for (std::size_t i = 0; i < sum_.size(); ++i) sum_[i] += lower_only[i];
  EXPECT_LT(max_abs_diff(both, sum_), 1e-9);
}

TEST(DualAggregation, Deterministic) {
  const auto u = oracle::random({1, 4, 8, 8, 8}, 12), l = oracle::random({1, 1, 8, 8, 8}, 13);
  Agg a(4, 1, HourglassConfig{}, 21), b(4, 1, HourglassConfig{}, 21);
  EXPECT_EQ(a.run(u, l, Mode::train), b.run(u, l, Mode::train));
}

TEST(Couple, ZeroWeightsGiveLower) {
  const auto gu = oracle::random({1, 3, 2, 4, 5}, 14), gl = oracle::random({1, 3, 2, 4, 5}, 15);
  const Tensor<double> w(Shape{3, 3, 1, 3, 3}), b(Shape{3});
  EXPECT_EQ(couple_value(gu, gl, w, b, w, b), gl);
}

TEST(Couple, IdentityF1ZeroF2GivesSum) {
  const auto gu = oracle::random({1, 3, 2, 4, 5}, 16), gl = oracle::random({1, 3, 2, 4, 5}, 17);
  Tensor<double> id(Shape{3, 3, 1, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) id.at(c, c, 0, 1, 1) = 1.0;
  const Tensor<double> zw(Shape{3, 3, 1, 3, 3}), zb(Shape{3});
  auto y = couple_value(gu, gl, id, zb, zw, zb);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_DOUBLE_EQ(y[i], gu[i] + gl[i]);
}

TEST(Couple, MatchesDirectFormula) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto gu = oracle::random({2, 3, 3, 4, 5}, 30 + s), gl = oracle::random({2, 3, 3, 4, 5}, 40 + s);
    const auto f1w = oracle::random({3, 3, 1, 3, 3}, 50 + s), f1b = oracle::random({3}, 60 + s);
    const auto f2w = oracle::random({3, 3, 1, 3, 3}, 70 + s), f2b = oracle::random({3}, 80 + s);
    EXPECT_LT(max_abs_diff(couple_value(gu, gl, f1w, f1b, f2w, f2b), oracle::couple(gu, gl, f1w, f1b, f2w, f2b)),
              1e-6);
  }
}

TEST(Couple, Rejections) {
  const Tensor<double> w(Shape{3, 3, 1, 3, 3}), b(Shape{3});
  EXPECT_THROW(couple_value(Tensor<double>(Shape{1, 3, 2, 4, 4}), Tensor<double>(Shape{1, 3, 2, 4, 5}), w, b, w, b),
               ShapeError);
  const Tensor<double> cube(Shape{3, 3, 3, 3, 3});
  const Tensor<double> g(Shape{1, 3, 2, 4, 4});
  EXPECT_THROW(couple_value(g, g, cube, b, w, b), ShapeError);
}

TEST(Couple, GradientAllInputs) {
  GradCheckOptions opt;
  const auto gu = oracle::random({1, 2, 2, 3, 4}, 90), gl = oracle::random({1, 2, 2, 3, 4}, 91);
  const auto f1w = oracle::random({2, 2, 1, 3, 3}, 92), f1b = oracle::random({2}, 93);
  const auto f2w = oracle::random({2, 2, 1, 3, 3}, 94), f2b = oracle::random({2}, 95);
  std::vector<Tensor<double>> in{gu, gl, f1w, f1b, f2w, f2b};
  for (std::size_t i = 0; i < in.size(); ++i) {
    auto r = grad_check(
        [&](Tape<double>& t, const Var<double>& x) {
          std::vector<Var<double>> v;
          for (std::size_t j = 0; j < in.size(); ++j) v.push_back(j == i ? x : t.constant(in[j]));
          auto y = couple(v[0], v[1], v[2], v[3], v[4], v[5]);
          return sum(mul(y, t.constant(oracle::random(y.shape(), 96))));
        },
        in[i], opt);
    EXPECT_LT(r.max_rel_error, 1e-4) << "input " << i;
  }
}

TEST(DualAggregation, GradientThroughBothBranches) {
  Agg a(2, 1, HourglassConfig{{2, 2, 2}, {true, true, true}, true});
  GradCheckOptions opt;
  opt.skip_kinks = true;
  opt.max_entries = 64;
  const auto u = oracle::random({1, 2, 8, 8, 8}, 97), l = oracle::random({1, 1, 8, 8, 8}, 98);
  for (int side = 0; side < 2; ++side) {
    auto r = grad_check(
        [&](Tape<double>& t, const Var<double>& x) {
          Context<double> ctx(t, a.params, Mode::eval, false);
          auto y = side ? a.agg(ctx, t.constant(u), x) : a.agg(ctx, x, t.constant(l));
          return sum(mul(y, t.constant(oracle::random(y.shape(), 99))));
        },
        side ? l : u, opt);
    EXPECT_LT(r.max_rel_error, 1e-4) << "side " << side;
    EXPECT_GT(r.checked, 32u);
  }
}
