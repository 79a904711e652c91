#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "dualcv/tape.hpp"

namespace dualcv {

struct GradCheckOptions {
  double eps = 1e-4;
  /// 0 checks every entry; otherwise a seeded random subset of this size.
  std::size_t max_entries = 0;
  std::uint64_t seed = 7;
  /// Skip entries whose one-sided differences disagree by more than
  /// kink_tol * max(1, |central|): the stencil straddles a kink or a jump
  /// (ReLU corner, top-k selection change) where no derivative exists.
  bool skip_kinks = false;
  double kink_tol = 1e-3;
};

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

/// Compares `analytic` against central differences of `eval_loss` by
/// perturbing entries of `x` in place (restored afterwards).
/// Relative error per entry is |analytic - central| / max(1, |analytic|).
template <class Eval>
GradCheckResult check_entries(Tensor<double>& x, const Tensor<double>& analytic, Eval&& eval_loss,
                              const GradCheckOptions& opt = {}) {
  x.require_same_shape(analytic, "grad_check");
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (opt.max_entries && idx.size() > opt.max_entries) {
    std::mt19937_64 rng(opt.seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(opt.max_entries);
    std::sort(idx.begin(), idx.end());
  }
  GradCheckResult r;
  const double f0 = opt.skip_kinks ? eval_loss() : 0.0;
  for (auto i : idx) {
    const double orig = x[i];
    x[i] = orig + opt.eps;
    const double fp = eval_loss();
    x[i] = orig - opt.eps;
    const double fm = eval_loss();
    x[i] = orig;
    const double central = (fp - fm) / (2 * opt.eps);
    if (opt.skip_kinks) {
      const double fwd = (fp - f0) / opt.eps, bwd = (f0 - fm) / opt.eps;
      if (std::abs(fwd - bwd) > opt.kink_tol * std::max(1.0, std::abs(central))) {
        ++r.skipped;
        continue;
      }
    }
    const double a = analytic[i];
    r.max_rel_error = std::max(r.max_rel_error, std::abs(a - central) / std::max(1.0, std::abs(a)));
    ++r.checked;
  }
  return r;
}

/// Gradient check of a scalar-valued tensor function f(tape, x).
template <class F>
GradCheckResult grad_check(F&& f, const Tensor<double>& x0, const GradCheckOptions& opt = {}) {
  Tensor<double> analytic;
  {
    Tape<double> tape;
    auto x = tape.leaf(x0);
    auto y = f(tape, x);
    if (y.value().size() != 1) fail_shape("grad_check requires a scalar-valued function, got ", to_string(y.shape()));
    tape.backward(y);
    analytic = x.grad() ? *x.grad() : Tensor<double>(x0.shape());
  }
  Tensor<double> x = x0;
  auto eval = [&] {
    Tape<double> tape;
    return f(tape, tape.constant(x)).value()[0];
  };
  return check_entries(x, analytic, eval, opt);
}

}  // namespace dualcv
