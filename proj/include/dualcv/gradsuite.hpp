#pragma once

#include <chrono>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dualcv/gradcheck.hpp"
#include "dualcv/model.hpp"
#include "dualcv/ops/softmax.hpp"

namespace dualcv {

struct GradEntry {
  std::string name;
  std::function<GradCheckResult()> run;
};

struct GradRow {
  std::string name;
  GradCheckResult result;
  double seconds = 0;
  bool passed = false;
};

inline constexpr double kGradTolerance = 1e-4;

namespace gradsuite {

inline Tensor<double> random(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(s));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

/// Values bounded away from zero (keeps activation kinks out of the stencil).
inline Tensor<double> away_from_zero(Shape s, std::mt19937_64& rng) {
  auto t = random(std::move(s), rng, 0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : t.values())
    if (sign(rng)) v = -v;
  return t;
}

/// Scalar probe <y, r> with a fixed random r, so every output entry matters.
inline Var<double> project(const Var<double>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, y.tape().constant(random(y.shape(), rng))));
}

using MultiFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Checks f with respect to each input in turn, the others held constant.
inline GradCheckResult check_inputs(const MultiFn& f, const std::vector<Tensor<double>>& inputs,
                                    const GradCheckOptions& opt = {}) {
  GradCheckResult total;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto r = grad_check(
        [&](Tape<double>& tape, const Var<double>& x) {
          std::vector<Var<double>> vars;
          for (std::size_t j = 0; j < inputs.size(); ++j) vars.push_back(j == i ? x : tape.constant(inputs[j]));
          return f(tape, vars);
        },
        inputs[i], opt);
    total.max_rel_error = std::max(total.max_rel_error, r.max_rel_error);
    total.checked += r.checked;
    total.skipped += r.skipped;
  }
  return total;
}

/// Toy model in fp64 on a 32x64 synthetic-like pair; a seeded subset of
/// entries of every trainable tensor is perturbed.
inline GradCheckResult end_to_end(std::uint64_t seed, std::size_t per_tensor) {
  ModelConfig cfg;
  cfg.dmax = 32;
  cfg.seed = seed;
  StereoModel<double> model(cfg);
  std::mt19937_64 rng(seed);
  const std::size_t H = 32, W = 64;
  const auto left = random({1, 3, H, W}, rng, 0.0, 1.0), right = random({1, 3, H, W}, rng, 0.0, 1.0);
  const auto gt = random({1, H, W}, rng, 1.0, 30.0);
  const Tensor<double> mask(Shape{1, H, W}, 1.0);
  auto loss_of = [&](Context<double>& ctx) {
    auto& tape = ctx.tape;
    auto p = model.forward(ctx, tape.constant(left), tape.constant(right));
    return total_loss(p.d0, p.d1, gt, mask).total;
  };
  Tape<double> tape;
  Context<double> ctx(tape, model.params(), Mode::train);
  tape.backward(loss_of(ctx));

  GradCheckOptions opt;
  opt.max_entries = per_tensor;
  // One weight feeds thousands of leaky-ReLU inputs, so a 1e-4 stencil can
  // straddle several corners whose one-sided effects cancel in the kink test
  // yet still bias the central difference. fp64 leaves room for a tighter one.
  opt.eps = 1e-6;
  opt.skip_kinks = true;
  opt.kink_tol = kGradTolerance;
  GradCheckResult total;
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    auto& e = model.params()[i];
    if (!e.trainable) continue;
    const Tensor<double> analytic = ctx(i).grad() ? *ctx(i).grad() : Tensor<double>(e.value.shape());
    opt.seed = seed + i;
    auto eval = [&] {
      Tape<double> t;
      Context<double> c(t, model.params(), Mode::train, false);
      return loss_of(c).value()[0];
    };
    auto r = check_entries(e.value, analytic, eval, opt);
    total.max_rel_error = std::max(total.max_rel_error, r.max_rel_error);
    total.checked += r.checked;
    total.skipped += r.skipped;
  }
  return total;
}

/// Leaky ReLU whose backward pass ignores the slope: a negative control.
inline Var<double> corrupted_leaky_relu(const Var<double>& x) {
  Tensor<double> out = x.value();
  for (auto& v : out.values()) v = v > 0 ? v : 0.01 * v;
  const auto ix = x.id();
  return x.tape().record(std::move(out), {ix}, [ix](Tape<double>& t, const Tensor<double>& g) { t.accumulate(ix, g); },
                         "corrupted_leaky_relu");
}

}  // namespace gradsuite

/// Every layer family plus the end-to-end toy model.
inline std::vector<GradEntry> default_grad_entries(std::uint64_t seed = 7, std::size_t e2e_per_tensor = 2) {
  using namespace gradsuite;
  std::vector<GradEntry> v;
  const GradCheckOptions smooth;
  GradCheckOptions kinks;
  kinks.skip_kinks = true;

  v.push_back({"conv2d", [=] {
                 std::mt19937_64 rng(seed);
                 return check_inputs(
                     [](Tape<double>&, const std::vector<Var<double>>& a) {
                       return project(conv2d(a[0], a[1], std::optional(a[2]), 2, 1, 1), 11);
                     },
                     {random({2, 3, 6, 7}, rng), random({4, 3, 3, 3}, rng), random({4}, rng)}, smooth);
               }});
  v.push_back({"conv2d_dilated", [=] {
                 std::mt19937_64 rng(seed + 1);
                 return check_inputs(
                     [](Tape<double>&, const std::vector<Var<double>>& a) {
                       return project(conv2d(a[0], a[1], std::optional(a[2]), 1, 2, 2), 12);
                     },
                     {random({1, 2, 7, 6}, rng), random({3, 2, 3, 3}, rng), random({3}, rng)}, smooth);
               }});
  v.push_back({"conv3d", [=] {
                 std::mt19937_64 rng(seed + 2);
                 return check_inputs(
                     [](Tape<double>&, const std::vector<Var<double>>& a) {
                       return project(conv3d(a[0], a[1], std::optional(a[2]), ConvSpec::uniform(2, 1, 1)), 13);
                     },
                     {random({1, 2, 5, 6, 7}, rng), random({3, 2, 3, 3, 3}, rng), random({3}, rng)}, smooth);
               }});
  v.push_back({"conv3d_transposed", [=] {
                 std::mt19937_64 rng(seed + 3);
                 return check_inputs(
                     [](Tape<double>&, const std::vector<Var<double>>& a) {
                       return project(
                           conv3d_transposed(a[0], a[1], std::optional(a[2]), ConvSpec::uniform(2, 1, 1)), 14);
                     },
                     {random({1, 3, 2, 3, 3}, rng), random({3, 2, 4, 4, 4}, rng), random({2}, rng)}, smooth);
               }});
  v.push_back({"batch_norm", [=] {
                 std::mt19937_64 rng(seed + 4);
                 return check_inputs(
                     [](Tape<double>&, const std::vector<Var<double>>& a) {
                       Tensor<double> rm(Shape{4}), rv(Shape{4}, 1.0);
                       return project(batch_norm(a[0], a[1], a[2], rm, rv, Mode::train), 15);
                     },
                     {random({3, 4, 5}, rng), random({4}, rng, 0.5, 1.5), random({4}, rng)}, smooth);
               }});
  v.push_back({"leaky_relu", [=] {
                 std::mt19937_64 rng(seed + 5);
                 return check_inputs(
                     [](Tape<double>&, const std::vector<Var<double>>& a) { return project(leaky_relu(a[0]), 16); },
                     {away_from_zero({4, 5}, rng)}, kinks);
               }});
  v.push_back({"relu", [=] {
                 std::mt19937_64 rng(seed + 6);
                 return check_inputs(
                     [](Tape<double>&, const std::vector<Var<double>>& a) { return project(relu(a[0]), 17); },
                     {away_from_zero({4, 5}, rng)}, kinks);
               }});
  v.push_back({"softmax_axis", [=] {
                 std::mt19937_64 rng(seed + 7);
                 return check_inputs(
                     [](Tape<double>&, const std::vector<Var<double>>& a) {
                       return project(softmax_axis(a[0], 1), 18);
                     },
                     {random({2, 5, 3}, rng, -2, 2)}, smooth);
               }});
  v.push_back({"smooth_l1", [=] {
                 std::mt19937_64 rng(seed + 8);
                 auto target = random({3, 8}, rng, -2, 2);
                 Tensor<double> mask(Shape{3, 8});
                 std::bernoulli_distribution keep(0.7);
                 for (auto& m : mask.values()) m = keep(rng) ? 1.0 : 0.0;
                 return check_inputs(
                     [=](Tape<double>&, const std::vector<Var<double>>& a) { return smooth_l1(a[0], target, mask); },
                     {random({3, 8}, rng, -3, 3)}, kinks);
               }});
  v.push_back({"couple", [=] {
                 std::mt19937_64 rng(seed + 9);
                 const Shape g{1, 3, 2, 4, 5}, k{3, 3, 1, 3, 3};
                 return check_inputs(
                     [](Tape<double>&, const std::vector<Var<double>>& a) {
                       return project(couple(a[0], a[1], a[2], a[3], a[4], a[5]), 19);
                     },
                     {random(g, rng), random(g, rng), random(k, rng), random({3}, rng), random(k, rng),
                      random({3}, rng)},
                     smooth);
               }});
  v.push_back({"topk_regress", [=] {
                 std::mt19937_64 rng(seed + 10);
                 return check_inputs(
                     [](Tape<double>&, const std::vector<Var<double>>& a) { return project(topk_regress(a[0], 2), 20); },
                     {random({1, 1, 6, 3, 4}, rng, -2, 2)}, kinks);
               }});
  v.push_back({"superpixel_upsample", [=] {
                 std::mt19937_64 rng(seed + 11);
                 return check_inputs(
                     [](Tape<double>&, const std::vector<Var<double>>& a) {
                       return project(superpixel_upsample(a[0], a[1]), 21);
                     },
                     {random({1, 2, 3}, rng, 0, 5), random({1, 9, 8, 12}, rng, 0, 1)}, smooth);
               }});
  for (auto kind : kAllVolumeKinds) {
    v.push_back({"cost_volume_" + std::string(to_string(kind)), [=] {
                   std::mt19937_64 rng(seed + 12 + static_cast<std::uint64_t>(kind));
                   const std::size_t C = uses_compressed_features(kind) ? kCompressedChannels : 8;
                   return check_inputs(
                       [kind](Tape<double>&, const std::vector<Var<double>>& a) {
                         return project(build_volume(kind, a[0], a[1], 4, 4).data, 22);
                       },
                       {random({1, C, 2, 6}, rng), random({1, C, 2, 6}, rng)}, smooth);
                 }});
  }
  v.push_back({"end_to_end", [=] { return end_to_end(seed, e2e_per_tensor); }});
  return v;
}

/// The negative control: must be reported as a failure.
inline GradEntry corrupted_grad_entry(std::uint64_t seed = 7) {
  return {"corrupted_leaky_relu", [=] {
            std::mt19937_64 rng(seed);
            return gradsuite::check_inputs(
                [](Tape<double>&, const std::vector<Var<double>>& a) {
                  return gradsuite::project(gradsuite::corrupted_leaky_relu(a[0]), 23);
                },
                {gradsuite::away_from_zero({4, 5}, rng)});
          }};
}

inline std::vector<GradRow> run_grad_suite(const std::vector<GradEntry>& entries, double tol = kGradTolerance) {
  std::vector<GradRow> rows;
  for (const auto& e : entries) {
    const auto t0 = std::chrono::steady_clock::now();
    GradRow r{e.name, e.run(), 0, false};
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.passed = r.result.checked > 0 && r.result.max_rel_error < tol;
    rows.push_back(r);
  }
  return rows;
}

}  // namespace dualcv
