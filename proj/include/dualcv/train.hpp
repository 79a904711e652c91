#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dualcv/io/config.hpp"
#include "dualcv/io/dataset.hpp"
#include "dualcv/io/synth.hpp"
#include "dualcv/model.hpp"

namespace dualcv {

/// Raised when the loss stops being finite; carries the offending step.
class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(std::size_t step, double value)
      : std::runtime_error("non-finite loss " + std::to_string(value) + " at step " + std::to_string(step)),
        step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

struct Batch {
  Tensor<float> left, right;  // [B,3,H,W]
  Tensor<float> d_gt, mask;   // [B,H,W]
};

/// Loss/metric mask of a sample: its own validity restricted to d < dmax.
inline Tensor<float> training_mask(const io::StereoSample& s, std::size_t dmax) {
  Tensor<float> m(s.valid.shape());
  for (std::size_t i = 0; i < m.size(); ++i)
    m[i] = (s.valid[i] != 0.0f && s.d_gt[i] >= 0.0f && s.d_gt[i] < static_cast<float>(dmax)) ? 1.0f : 0.0f;
  return m;
}

inline Batch make_batch(const std::vector<io::StereoSample>& samples, const std::vector<std::size_t>& idx,
                        std::size_t dmax) {
  if (idx.empty()) throw std::invalid_argument("make_batch: empty index list");
  const std::size_t B = idx.size(), H = samples.at(idx[0]).height(), W = samples.at(idx[0]).width();
  Batch b{Tensor<float>(Shape{B, 3, H, W}), Tensor<float>(Shape{B, 3, H, W}), Tensor<float>(Shape{B, H, W}),
          Tensor<float>(Shape{B, H, W})};
  for (std::size_t i = 0; i < B; ++i) {
    const auto& s = samples.at(idx[i]);
    if (s.height() != H || s.width() != W) fail_shape("make_batch: samples differ in extent");
    const auto mask = training_mask(s, dmax);
    std::copy(s.left.values().begin(), s.left.values().end(), b.left.data() + i * 3 * H * W);
    std::copy(s.right.values().begin(), s.right.values().end(), b.right.data() + i * 3 * H * W);
    std::copy(s.d_gt.values().begin(), s.d_gt.values().end(), b.d_gt.data() + i * H * W);
    std::copy(mask.values().begin(), mask.values().end(), b.mask.data() + i * H * W);
  }
  return b;
}

struct StepResult {
  double loss = 0;
  double epe = 0;  // of d1 on the batch; NaN when the mask is empty
};

/// Model + Adam + loss weights. One call to step() is one optimizer update.
class Trainer {
 public:
  explicit Trainer(const io::RunConfig& cfg)
      : cfg_(cfg), model_(cfg.model()), adam_(model_.params(), cfg.adam()), weights_(cfg.loss_weights()) {}

  StereoModel<float>& model() { return model_; }
  const StereoModel<float>& model() const { return model_; }
  std::size_t steps_taken() const { return adam_.steps(); }

  StepResult step(const Batch& b) {
    Tape<float> tape;
    Context<float> ctx(tape, model_.params(), Mode::train);
    auto pred = model_.forward(ctx, tape.constant(b.left), tape.constant(b.right));
    auto loss = total_loss(pred.d0, pred.d1, b.d_gt, b.mask, weights_);
    StepResult r;
    r.loss = loss.total.value()[0];
    if (!std::isfinite(r.loss)) throw NonFiniteLoss(adam_.steps(), r.loss);
    try {
      r.epe = epe(pred.d1.value(), b.d_gt, b.mask);
    } catch (const UndefinedReport&) {
      r.epe = std::nan("");
    }
    tape.backward(loss.total);
    adam_.step(model_.params(), ctx.bound);
    return r;
  }

 private:
  io::RunConfig cfg_;
  StereoModel<float> model_;
  Adam<float> adam_;
  LossWeights weights_;
};

/// Inference without a gradient graph.
inline Prediction<float> predict(StereoModel<float>& model, const Tensor<float>& left, const Tensor<float>& right,
                                 Tape<float>& tape, Mode mode = Mode::eval) {
  Context<float> ctx(tape, model.params(), mode, false);
  return model.forward(ctx, tape.constant(left), tape.constant(right));
}

inline Tensor<float> predict_disparity(StereoModel<float>& model, const Tensor<float>& left,
                                       const Tensor<float>& right, Mode mode = Mode::eval) {
  Tape<float> tape;
  return predict(model, left, right, tape, mode).d1.value();
}

struct TrainRecord {
  std::size_t step = 0;
  double loss = 0;
  double epe = 0;
};

struct TrainOptions {
  std::size_t steps = 0;
  std::size_t batch = 1;
  std::uint64_t seed = 1;
  /// Called after every step.
  std::function<void(const TrainRecord&)> on_step;
};

/// Epoch-wise shuffled passes over `samples`; deterministic given the seed.
inline std::vector<TrainRecord> train(Trainer& trainer, const std::vector<io::StereoSample>& samples,
                                      const TrainOptions& opt, std::size_t dmax) {
  if (samples.empty()) throw std::invalid_argument("train: no samples");
  std::mt19937_64 rng(opt.seed ^ 0x5eedull);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  std::vector<TrainRecord> log;
  log.reserve(opt.steps);
  for (std::size_t s = 0; s < opt.steps; ++s) {
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < std::min(opt.batch, samples.size()); ++k) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    const auto r = trainer.step(make_batch(samples, idx, dmax));
    log.push_back({s, r.loss, r.epe});
    if (opt.on_step) opt.on_step(log.back());
  }
  return log;
}

struct SampleEval {
  EvalReport report;
  double ms = 0;  // forward time
};

/// Per-sample reports in eval mode; samples without valid pixels are rejected.
inline std::vector<SampleEval> evaluate_samples(StereoModel<float>& model,
                                                const std::vector<io::StereoSample>& samples, std::size_t dmax,
                                                Mode mode = Mode::eval) {
  if (samples.empty()) throw UndefinedReport("evaluation set is empty");
  std::vector<SampleEval> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto b = make_batch(samples, {i}, dmax);
    const auto t0 = std::chrono::steady_clock::now();
    const auto d = predict_disparity(model, b.left, b.right, mode);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    out.push_back({evaluate(d, b.d_gt, b.mask), ms});
  }
  return out;
}

/// Synthetic training set for a config (seed-derived).
inline std::vector<io::StereoSample> synthetic_set(const io::RunConfig& c, std::uint64_t salt = 0,
                                                   std::optional<std::size_t> n = std::nullopt) {
  io::SynthOptions opt;
  opt.zero_disparity = c.zero_disparity;
  return io::synth_generate(c.seed ^ salt, c.height, c.width, c.dmax, n.value_or(c.samples), opt);
}

/// On-disk samples when `data` is set, otherwise the synthetic set.
inline std::vector<io::StereoSample> dataset_for(const io::RunConfig& c) {
  if (!c.data.empty()) {
    auto d = io::load_dataset(c.data);
    if (d.empty()) throw UndefinedReport("dataset " + c.data + " contains no samples");
    return d;
  }
  return synthetic_set(c);
}

// ---------------------------------------------------------------- ablation

struct AblationSpec {
  std::string architecture;
  VolumeKind upper;
  std::optional<VolumeKind> lower;
  std::array<bool, 3> coupling;
};

/// Baseline, two single-volume rows, six coupled pairings, three coupling scales.
inline std::vector<AblationSpec> ablation_matrix() {
  using VK = VolumeKind;
  const std::array<bool, 3> none{false, false, false}, all{true, true, true};
  std::vector<AblationSpec> m{
      {"Baseline", VK::gwc_dot, VK::norm_corr, none},
      {"Single Cost Volume", VK::gwc_dot, std::nullopt, none},
      {"Single Cost Volume", VK::norm_corr, std::nullopt, none},
  };
  const VK order[4] = {VK::gwc_dot, VK::norm_corr, VK::concat, VK::gwc_sub};
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) m.push_back({"Dual Cost Volume", order[i], order[j], all});
  m.push_back({"Coupling Scale", VK::gwc_dot, VK::norm_corr, {true, false, false}});
  m.push_back({"Coupling Scale", VK::gwc_dot, VK::norm_corr, {true, true, false}});
  m.push_back({"Coupling Scale", VK::gwc_dot, VK::norm_corr, all});
  return m;
}

struct AblationRow {
  AblationSpec spec;
  double final_loss = 0;
  EvalReport report;
  double time_ms = 0;  // mean forward time per pair
  double wall_s = 0;   // training + evaluation

  bool uses(VolumeKind k) const { return spec.upper == k || (spec.lower && *spec.lower == k); }
  bool coupled() const { return spec.lower && (spec.coupling[0] || spec.coupling[1] || spec.coupling[2]); }
};

inline std::string ablation_csv_header() {
  return "architecture,coupling_module,first_scale,second_scale,third_scale,group_wise_correlation,"
         "norm_correlation,concatenation,group_wise_subtraction,epe_px,d1_pct,gt1px_pct,gt2px_pct,gt3px_pct,"
         "time_ms,final_loss,wall_s";
}

inline std::string ablation_csv_row(const AblationRow& r) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  auto flag = [](bool b) { return b ? 1 : 0; };
  const auto& c = r.spec.coupling;
  const bool dual = r.spec.lower.has_value();
  os << r.spec.architecture << ',' << flag(r.coupled()) << ',' << flag(dual && c[0]) << ',' << flag(dual && c[1])
     << ',' << flag(dual && c[2]) << ',' << flag(r.uses(VolumeKind::gwc_dot)) << ','
     << flag(r.uses(VolumeKind::norm_corr)) << ',' << flag(r.uses(VolumeKind::concat)) << ','
     << flag(r.uses(VolumeKind::gwc_sub)) << ',' << r.report.epe << ',' << r.report.d1 << ','
     << r.report.bad.at(1.0) << ',' << r.report.bad.at(2.0) << ',' << r.report.bad.at(3.0) << ',' << r.time_ms
     << ',' << r.final_loss << ',' << r.wall_s;
  return os.str();
}

inline std::string ablation_label(const AblationSpec& s) {
  std::string l = s.architecture + " [" + std::string(to_string(s.upper));
  if (s.lower) l += "+" + std::string(to_string(*s.lower));
  l += " coupling=" + io::coupling_string(s.coupling) + "]";
  return l;
}

class AblationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Trains every configuration for `steps` updates on the same synthetic data
/// and evaluates on a held-out synthetic set.
inline std::vector<AblationRow> run_ablation(const io::RunConfig& base, std::size_t steps,
                                             std::size_t eval_samples = 4,
                                             const std::function<void(const AblationRow&)>& on_row = {}) {
  const auto train_set = synthetic_set(base);
  const auto eval_set = synthetic_set(base, 0xe7a1ull, eval_samples);
  std::vector<AblationRow> rows;
  for (const auto& spec : ablation_matrix()) {
    const auto t0 = std::chrono::steady_clock::now();
    AblationRow row{spec, 0, {}, 0, 0};
    try {
      io::RunConfig c = base;
      c.upper = spec.upper;
      c.lower = spec.lower;
      c.coupling = spec.coupling;
      c.validate();
      Trainer trainer(c);
      auto log = train(trainer, train_set, {steps, c.batch, c.seed, {}}, c.dmax);
      row.final_loss = log.empty() ? std::nan("") : log.back().loss;
      std::vector<EvalReport> reps;
      for (const auto& e : evaluate_samples(trainer.model(), eval_set, c.dmax)) {
        reps.push_back(e.report);
        row.time_ms += e.ms / static_cast<double>(eval_set.size());
      }
      row.report = aggregate(reps);
    } catch (const std::exception& e) {
      throw AblationError("ablation row '" + ablation_label(spec) + "' failed: " + e.what());
    }
    row.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rows.push_back(row);
    if (on_row) on_row(row);
  }
  return rows;
}

}  // namespace dualcv
