// One PASS/FAIL line per acceptance criterion. Exit status 0 iff all pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <unistd.h>

#include "dualcv/costvol_oracle.hpp"
#include "dualcv/gradsuite.hpp"
#include "dualcv/io/dataset.hpp"
#include "dualcv/train.hpp"
#include "oracles.hpp"

using namespace dualcv;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = run_grad_suite(default_grad_entries());
  const double secs = seconds_since(t0);
  double worst = 0;
  std::string failed;
  for (const auto& r : rows) {
    worst = std::max(worst, r.result.max_rel_error);
    if (!r.passed) failed += " " + r.name;
  }
  const auto control = run_grad_suite({corrupted_grad_entry(7)});
  const bool control_caught = !control[0].passed;
  Outcome o{failed.empty() && control_caught && secs < 120.0,
            std::to_string(rows.size()) + " entries, max rel error " + fmt(worst) + ", " + fmt(secs) +
                " s, negative control " + (control_caught ? "caught" : "MISSED")};
  if (!failed.empty()) o.detail += ", failing:" + failed;
  return o;
}

Outcome costvol_oracles() {
  const VolumeKind kinds[] = {VolumeKind::gwc_dot, VolumeKind::gwc_sub, VolumeKind::norm_corr, VolumeKind::concat};
  const oracle::Cost ok[] = {oracle::Cost::gwc_dot, oracle::Cost::gwc_sub, oracle::Cost::norm_corr,
                             oracle::Cost::concat};
  double worst = 0;
  bool shapes = true;
  for (int k = 0; k < 4; ++k)
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const std::size_t C = uses_compressed_features(kinds[k]) ? 12 : 8;
      const auto fl = oracle::random({1, C, 8, 12}, 1000 + seed), fr = oracle::random({1, C, 8, 12}, 2000 + seed);
      Tape<double> t;
      const auto v = build_volume(kinds[k], t.constant(fl), t.constant(fr), 4, 6).data.value();
      const std::size_t cv = kinds[k] == VolumeKind::norm_corr ? 1 : kinds[k] == VolumeKind::concat ? 24 : 4;
      shapes = shapes && v.shape() == Shape{1, cv, 6, 8, 12};
      worst = std::max(worst, max_abs_diff(v, oracle::cost_volume(ok[k], fl, fr, 4, 6)));
      worst = std::max(worst, max_abs_diff(v, cost_volume_oracle(kinds[k], fl, fr, 4, 6)));
    }
  return {shapes && worst < 1e-6, "4 kinds x 10 seeds, max abs diff " + fmt(worst) + (shapes ? "" : ", SHAPE ERROR")};
}

Outcome coupling_algebra() {
  const auto gu = oracle::random({2, 4, 4, 6, 8}, 1), gl = oracle::random({2, 4, 4, 6, 8}, 2);
  const Tensor<double> zw(Shape{4, 4, 1, 3, 3}), zb(Shape{4});
  Tensor<double> id(Shape{4, 4, 1, 3, 3});
  for (std::size_t c = 0; c < 4; ++c) id.at(c, c, 0, 1, 1) = 1.0;
  Tape<double> t;
  auto run = [&](const Tensor<double>& f1, const Tensor<double>& f2) {
    return couple(t.constant(gu), t.constant(gl), t.constant(f1), t.constant(zb), t.constant(f2), t.constant(zb))
        .value();
  };
  const bool zero_ok = run(zw, zw) == gl;
  const auto s = run(id, zw);
  bool sum_ok = true;
  for (std::size_t i = 0; i < s.size(); ++i) sum_ok = sum_ok && s[i] == gu[i] + gl[i];
  return {zero_ok && sum_ok, std::string("zero weights -> G_l ") + (zero_ok ? "exact" : "WRONG") +
                                 ", identity f1 / zero f2 -> G_u + G_l " + (sum_ok ? "exact" : "WRONG")};
}

Outcome regression_exactness() {
  const std::size_t dq = 12, dmax = 48;
  double worst_onehot = 0;
  for (std::size_t d = 0; d < dq; ++d) {
    Tensor<double> agg(Shape{1, 1, dq, 2, 2});
    for (std::size_t p = 0; p < 4; ++p) agg[d * 4 + p] = 100.0;
    Tape<double> t;
    for (double v : topk_regress(t.constant(agg), 2).value().values())
      worst_onehot = std::max(worst_onehot, std::abs(v - static_cast<double>(d)));
  }
  // The nine weights sum to one only up to rounding.
  double constant_err = 0;
  {
    Tape<double> t;
    const double c = 3.375;
    auto w = SuperpixelHead<double>::weights_from_logits(t.constant(oracle::random({1, 144, 4, 5}, 3, -6, 6)));
    for (double v : superpixel_upsample(t.constant(Tensor<double>(Shape{1, 4, 5}, c)), w).value().values())
      constant_err = std::max(constant_err, std::abs(v - 4 * c));
  }
  const bool constant_ok = constant_err < 1e-12;
  // Bounds on the full pipeline, untrained and in both modes.
  io::RunConfig cfg;
  cfg.dmax = dmax;
  StereoModel<float> model(cfg.model());
  const auto data = synthetic_set(cfg, 0xb0, 2);
  float lo = 1e9f, hi = -1e9f;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto b = make_batch(data, {i}, dmax);
    for (Mode m : {Mode::eval, Mode::train}) {
      const auto d = predict_disparity(model, b.left, b.right, m);
      for (float v : d.values()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  const bool bounds = lo >= 0.0f && hi <= static_cast<float>(dmax - 1);
  return {worst_onehot < 1e-5 && constant_ok && bounds,
          "one-hot max err " + fmt(worst_onehot) + " over 12 indices, constant upsample err " +
              fmt(constant_err) + ", d1 range [" + fmt(lo) + ", " + fmt(hi) + "]"};
}

Outcome overfit() {
  io::RunConfig cfg;  // toy preset: 48 channels, Ng 4, Dmax 48, 64x128, 20 pairs, lr 1e-3
  cfg.steps = 2000;
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = synthetic_set(cfg);
  Trainer trainer(cfg);
  const auto log = train(trainer, data, {cfg.steps, cfg.batch, cfg.seed, {}}, cfg.dmax);
  std::vector<EvalReport> reps;
  for (const auto& e : evaluate_samples(trainer.model(), data, cfg.dmax)) reps.push_back(e.report);
  const auto agg = aggregate(reps);
  const double secs = seconds_since(t0);
  const double final_loss = log.back().loss;
  return {agg.epe < 1.0 && final_loss < 0.2 && secs < 900.0,
          std::to_string(log.size()) + " steps, train EPE " + fmt(agg.epe) + " px, final loss " + fmt(final_loss) +
              ", " + fmt(secs) + " s"};
}

Outcome ablation() {
  io::RunConfig cfg;
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = run_ablation(cfg, 50);
  bool finite = true, columns = true;
  const auto header = ablation_csv_header();
  const auto header_cols = std::count(header.begin(), header.end(), ',');
  for (const auto& r : rows) {
    finite = finite && std::isfinite(r.final_loss) && std::isfinite(r.report.epe);
    const auto line = ablation_csv_row(r);
    columns = columns && std::count(line.begin(), line.end(), ',') == header_cols;
  }
  const bool baseline = !rows.empty() && rows[0].spec.architecture == "Baseline" && !rows[0].coupled();
  return {rows.size() == 12 && finite && columns && baseline,
          std::to_string(rows.size()) + " rows, losses " + (finite ? "finite" : "NON-FINITE") + ", " +
              std::to_string(header_cols + 1) + " columns, " + fmt(seconds_since(t0)) + " s"};
}

Outcome metrics() {
  std::mt19937_64 rng(99);
  double worst = 0;
  for (int f = 0; f < 100; ++f) {
    const std::size_t n = 10 + rng() % 300;
    const auto d = oracle::random({n}, rng(), 0, 80), gt = oracle::random({n}, rng(), 0, 80);
    auto m = oracle::random({n}, rng(), 0, 1);
    for (auto& v : m.values()) v = v < 0.4 ? 1.0 : 0.0;  // sparse
    m[0] = 1.0;
    const auto want = oracle::metrics(d.values(), gt.values(), m.values());
    const auto got = evaluate(d, gt, m);
    worst = std::max({worst, std::abs(got.epe - want.epe), std::abs(got.d1 - want.d1)});
    for (int s = 0; s < 3; ++s) worst = std::max(worst, std::abs(got.bad.at(s + 1.0) - want.bad[s]));
  }
  const Tensor<double> one(Shape{1}, 1.0);
  auto d1_of = [&](double d, double g) { return d1_rate(Tensor<double>(Shape{1}, d), Tensor<double>(Shape{1}, g), one); };
  const bool boundary = d1_of(14, 10) == 100.0 && d1_of(104, 100) == 0.0 && d1_of(13, 10) == 0.0 &&
                        d1_of(105, 100) == 0.0 && d1_of(105.01, 100) == 100.0;
  return {worst < 1e-9 && boundary,
          "100 sparse fixtures, max diff " + fmt(worst) + ", D1 boundary " + (boundary ? "ok" : "WRONG")};
}

Outcome io_checks() {
  const fs::path dir = fs::temp_directory_path() / ("dualcv_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  auto m = oracle::random({5, 7}, 4, -1e3, 1e3).cast<float>();
  io::write_pfm(dir / "m.pfm", m);
  const auto back = io::read_pfm(dir / "m.pfm").data;
  const bool pfm = back.shape() == m.shape() && std::memcmp(back.data(), m.data(), m.size() * 4) == 0;
  io::write_png(dir / "d.png", io::PngImage{2, 1, 1, 16, {25600, 0}});
  const auto dp = io::read_disp_png16(dir / "d.png");
  const bool png = dp.disparity[0] == 100.0f && dp.valid[0] == 1.0f && dp.valid[1] == 0.0f;
  fs::remove_all(dir);
  double worst_frac = 1.0;
  for (const auto& s : io::synth_generate(2024, 64, 128, 48, 5)) {
    std::size_t valid = 0, good = 0;
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 128; ++x) {
        if (s.valid.at(y, x) == 0.0f) continue;
        ++valid;
        const double u = static_cast<double>(x) - s.d_gt.at(y, x);
        const auto x0 = static_cast<long long>(std::floor(u));
        if (x0 < 0 || x0 > 127) continue;
        const auto x1 = std::min<long long>(x0 + 1, 127);
        const double t = u - static_cast<double>(x0);
        bool g = true;
        for (std::size_t c = 0; c < 3; ++c)
          g = g && std::abs((1 - t) * s.right.at(c, y, x0) + t * s.right.at(c, y, x1) - s.left.at(c, y, x)) <= 1e-3;
        good += g;
      }
    worst_frac = std::min(worst_frac, static_cast<double>(good) / static_cast<double>(valid));
  }
  return {pfm && png && worst_frac >= 0.99, std::string("PFM round trip ") + (pfm ? "bit-exact" : "DIFFERS") +
                                                 ", PNG 25600->100 / 0->invalid " + (png ? "ok" : "WRONG") +
                                                 ", warp consistency min " + fmt(100 * worst_frac) + "%"};
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"gradient suite", gradient_suite},
      {"cost-volume oracle equivalence", costvol_oracles},
      {"coupling algebra", coupling_algebra},
      {"regression exactness", regression_exactness},
      {"overfit check", overfit},
      {"ablation matrix", ablation},
      {"metric correctness", metrics},
      {"io", io_checks},
  };
  int failures = 0, n = 0;
  for (const auto& [name, run] : criteria) {
    ++n;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << " (" << name << "): " << o.detail << std::endl;
  }
  std::cout << (failures ? "FAIL" : "PASS") << ": " << n - failures << "/" << n << " criteria" << std::endl;
  return failures ? 1 : 0;
}
