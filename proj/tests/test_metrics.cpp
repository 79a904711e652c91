#include <gtest/gtest.h>

#include "dualcv/metrics.hpp"
#include "oracles.hpp"

using namespace dualcv;

namespace {

Tensor<double> vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor<double>(Shape{n}, std::move(v));
}

Tensor<double> full(std::size_t n, double v) { return Tensor<double>(Shape{n}, v); }

}  // namespace

TEST(Epe, Examples) {
  const auto gt = vec({1, 5, 9}), m = full(3, 1);
  EXPECT_EQ(epe(gt, gt, m), 0.0);
  EXPECT_DOUBLE_EQ(epe(vec({2, 6, 10}), gt, m), 1.0);
  EXPECT_DOUBLE_EQ(epe(vec({1, 6, 11}), gt, m), 1.0);
  EXPECT_DOUBLE_EQ(epe(vec({1, 6, 100}), gt, vec({1, 1, 0})), 0.5);
}

TEST(Epe, EmptyMaskIsUndefined) {
  const auto z = full(4, 0);
  EXPECT_THROW(epe(z, z, z), UndefinedReport);
  EXPECT_THROW(d1_rate(z, z, z), UndefinedReport);
  EXPECT_THROW(bad_sigma(z, z, z, 1.0), UndefinedReport);
  EXPECT_THROW(evaluate(z, z, z), UndefinedReport);
}

TEST(D1, ThresholdBoundary) {
  const auto m = full(1, 1);
  EXPECT_EQ(d1_rate(vec({14}), vec({10}), m), 100.0);   // threshold 3
  EXPECT_EQ(d1_rate(vec({104}), vec({100}), m), 0.0);   // threshold 5
  EXPECT_EQ(d1_rate(vec({13}), vec({10}), m), 0.0);     // exactly 3 is not an outlier
  EXPECT_EQ(d1_rate(vec({105.5}), vec({100}), m), 100.0);
  EXPECT_EQ(d1_rate(vec({7, 8}), vec({7, 8}), full(2, 1)), 0.0);
}

TEST(BadSigma, Examples) {
  const auto gt = full(4, 10), m = full(4, 1);
  EXPECT_EQ(bad_sigma(full(4, 11.5), gt, m, 2.0), 0.0);
  EXPECT_EQ(bad_sigma(full(4, 12.5), gt, m, 2.0), 100.0);
  EXPECT_EQ(bad_sigma(vec({13, 13, 10, 10}), gt, m, 2.0), 50.0);
  EXPECT_THROW(bad_sigma(gt, gt, m, 0.0), std::invalid_argument);
}

TEST(Metrics, RandomFixturesMatchOracle) {
  std::mt19937_64 rng(1);
  for (int f = 0; f < 100; ++f) {
    const std::size_t n = 5 + rng() % 200;
    auto d = oracle::random({n}, rng(), 0, 60), gt = oracle::random({n}, rng(), 0, 60);
    auto m = oracle::random({n}, rng(), 0, 1);
    for (auto& v : m.values()) v = v < 0.7 ? 1.0 : 0.0;
    m[0] = 1.0;
    const auto want = oracle::metrics(d.values(), gt.values(), m.values());
    const auto got = evaluate(d, gt, m);
    EXPECT_NEAR(got.epe, want.epe, 1e-9);
    EXPECT_NEAR(got.d1, want.d1, 1e-9);
    for (int s = 0; s < 3; ++s) EXPECT_NEAR(got.bad.at(s + 1.0), want.bad[s], 1e-9);
    std::size_t valid = 0;
    for (double v : m.values()) valid += v != 0;
    EXPECT_EQ(got.valid_pixels, valid);
  }
}

TEST(Metrics, Properties) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto d = oracle::random({64}, s, 0, 40), gt = oracle::random({64}, s + 100, 0, 40);
    const auto m = full(64, 1);
    auto ds = d, gs = gt;
    for (auto& v : ds.values()) v += 7.25;
    for (auto& v : gs.values()) v += 7.25;
    EXPECT_NEAR(epe(ds, gs, m), epe(d, gt, m), 1e-9);
    double prev = 101;
    for (double sigma : {0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0, 40.0}) {
      const double b = bad_sigma(d, gt, m, sigma);
      EXPECT_LE(b, prev);
      EXPECT_GE(b, 0.0);
      prev = b;
    }
    const auto zero = full(64, 0);
    EXPECT_EQ(d1_rate(d, zero, m), bad_sigma(d, zero, m, 3.0));
  }
}

TEST(Metrics, AggregateWeightsByValidPixels) {
  EvalReport a, b;
  a.epe = 1.0;
  a.d1 = 10;
  a.bad[1.0] = 20;
  a.valid_pixels = 100;
  b.epe = 4.0;
  b.d1 = 40;
  b.bad[1.0] = 80;
  b.valid_pixels = 300;
  const auto r = aggregate({a, b});
  EXPECT_DOUBLE_EQ(r.epe, 3.25);
  EXPECT_DOUBLE_EQ(r.d1, 32.5);
  EXPECT_DOUBLE_EQ(r.bad.at(1.0), 65);
  EXPECT_EQ(r.valid_pixels, 400u);
  EXPECT_THROW(aggregate({}), UndefinedReport);
}

TEST(Validity, SparseConvention) {
  const auto m = sparse_validity(vec({0, 1, 47.9, 48, -1, std::nan(""), INFINITY}), 48);
  EXPECT_EQ(m.values(), (std::vector<double>{0, 1, 1, 0, 0, 0, 0}));
}

TEST(DownsampleGt, ConstantAndInvalid) {
  const Tensor<double> gt(Shape{2, 8, 12}, 40.0), none(Shape{2, 8, 12});
  auto [qd, qm] = downsample_gt(gt, none);
  ASSERT_EQ(qd.shape(), (Shape{2, 2, 3}));
  for (double v : qd.values()) EXPECT_EQ(v, 10.0);
  for (double v : qm.values()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(downsample_gt(Tensor<double>(Shape{1, 6, 8}), Tensor<double>(Shape{1, 6, 8})), ShapeError);
}

TEST(DownsampleGt, StridedGatherExact) {
  const auto gt = oracle::random({2, 8, 16}, 5, 0, 50), m = oracle::random({2, 8, 16}, 6, 0, 1);
  auto [qd, qm] = downsample_gt(gt, m);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t x = 0; x < 4; ++x) {
        EXPECT_EQ(qd.at(b, y, x), gt.at(b, 4 * y, 4 * x) / 4.0);
        EXPECT_EQ(qm.at(b, y, x), m.at(b, 4 * y, 4 * x));
      }
}

namespace {

struct LossValue {
  double total;
  bool empty_mask;
};

LossValue loss(const Tensor<double>& d0, const Tensor<double>& d1, const Tensor<double>& gt,
               const Tensor<double>& m, LossWeights w = {}) {
  Tape<double> t;
  const auto r = total_loss(t.constant(d0), t.constant(d1), gt, m, w);
  return {r.total.value()[0], r.empty_mask};
}

}  // namespace

TEST(TotalLoss, Examples) {
  const auto gt = oracle::random({1, 8, 8}, 7, 1, 40);
  const auto m = Tensor<double>(Shape{1, 8, 8}, 1.0);
  auto [q, qm] = downsample_gt(gt, m);
  EXPECT_EQ(loss(q, gt, gt, m).total, 0.0);
  auto off = gt;
  for (auto& v : off.values()) v += 3.0;
  EXPECT_DOUBLE_EQ(loss(q, off, gt, m).total, 2.5);
  // Weights (0, 1) drop the quarter term however wrong d0 is.
  auto bad_q = q;
  for (auto& v : bad_q.values()) v += 100;
  EXPECT_DOUBLE_EQ(loss(bad_q, off, gt, m, {0.0, 1.0}).total, 2.5);
  EXPECT_DOUBLE_EQ(loss(bad_q, gt, gt, m).total, 0.3 * 99.5);
  EXPECT_THROW(loss(q, gt, gt, m, {-1.0, 1.0}), std::invalid_argument);
}

TEST(TotalLoss, EmptyMaskFlagged) {
  const auto gt = oracle::random({1, 4, 4}, 8, 1, 40);
  const Tensor<double> none(Shape{1, 4, 4});
  const auto r = loss(oracle::random({1, 1, 1}, 9), oracle::random({1, 4, 4}, 10), gt, none);
  EXPECT_TRUE(r.empty_mask);
  EXPECT_EQ(r.total, 0.0);
}

TEST(TotalLoss, NonnegativeAndZeroOnlyWhenExact) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto gt = oracle::random({1, 8, 8}, s, 0, 40);
    const auto d1 = oracle::random({1, 8, 8}, s + 50, 0, 40);
    const auto d0 = oracle::random({1, 2, 2}, s + 90, 0, 10);
    const Tensor<double> m(Shape{1, 8, 8}, 1.0);
    EXPECT_GT(loss(d0, d1, gt, m).total, 0.0);
  }
}
