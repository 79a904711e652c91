// Command-line front end: train, eval, infer, ablate, gradcheck, gen-data.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dualcv/gradsuite.hpp"
#include "dualcv/io/checkpoint.hpp"
#include "dualcv/io/dataset.hpp"
#include "dualcv/train.hpp"

namespace fs = std::filesystem;
using namespace dualcv;

namespace {

/// Flags shared by every subcommand; each maps onto a config key.
struct CommonFlags {
  std::optional<std::string> config;
  std::optional<std::string> seed, dmax, ng, upper, lower, coupling, steps, out;
  std::vector<std::string> sets;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "key=value config file")->check(CLI::ExistingFile);
    app->add_option("--seed", seed, "random seed");
    app->add_option("--dmax", dmax, "maximum disparity (multiple of 4)");
    app->add_option("--ng", ng, "correlation groups");
    app->add_option("--upper", upper, "upper volume: gwc-dot|gwc-sub|norm-corr|concat");
    app->add_option("--lower", lower, "lower volume kind, or none");
    app->add_option("--coupling", coupling, "coupling mask, e.g. 111");
    app->add_option("--steps", steps, "optimizer steps");
    app->add_option("--out", out, "output directory");
    app->add_option("--set", sets, "extra key=value override (repeatable)");
  }

  io::RunConfig load() const {
    std::vector<std::pair<std::string, std::string>> ov;
    auto push = [&](const char* key, const std::optional<std::string>& v) {
      if (v) ov.emplace_back(key, *v);
    };
    push("seed", seed);
    push("dmax", dmax);
    push("ng", ng);
    push("upper", upper);
    push("lower", lower);
    push("coupling", coupling);
    push("steps", steps);
    push("out", out);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw io::ConfigError("--set expects key=value, got '" + s + "'");
      ov.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    std::optional<fs::path> file;
    if (config) file = *config;
    return io::load_config(file, ov);
  }
};

std::ofstream open_csv(const fs::path& path, const std::string& header) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot create " + path.string());
  f.imbue(std::locale::classic());
  f << std::setprecision(9) << header << '\n';
  return f;
}

StereoModel<float> load_model(const io::RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw io::CheckpointError("no checkpoint given (use --checkpoint PATH)");
  StereoModel<float> model(cfg.model());
  io::load_checkpoint(cfg.checkpoint, model.params());
  return model;
}

int cmd_train(const io::RunConfig& cfg) {
  const fs::path out = cfg.out;
  fs::create_directories(out);
  {
    std::ofstream f(out / "config.txt");
    f << io::dump_config(cfg);
  }
  const auto data = dataset_for(cfg);
  Trainer trainer(cfg);
  auto csv = open_csv(out / "loss.csv", "step,loss,epe");
  const auto t0 = std::chrono::steady_clock::now();
  TrainOptions opt{cfg.steps, cfg.batch, cfg.seed, [&](const TrainRecord& r) {
                     csv << r.step << ',' << r.loss << ',' << r.epe << '\n';
                     if (cfg.log_every && (r.step + 1) % cfg.log_every == 0)
                       std::cerr << "step " << r.step + 1 << " loss " << r.loss << " epe " << r.epe << '\n';
                     if (cfg.checkpoint_every && (r.step + 1) % cfg.checkpoint_every == 0)
                       io::save_checkpoint(out / "checkpoint.bin", trainer.model().params());
                   }};
  std::vector<TrainRecord> log;
  try {
    log = train(trainer, data, opt, cfg.dmax);
  } catch (const NonFiniteLoss& e) {
    csv.flush();
    std::cerr << "error: training aborted: " << e.what() << '\n';
    return 1;
  }
  io::save_checkpoint(out / "checkpoint.bin", trainer.model().params());
  std::vector<EvalReport> reps;
  for (const auto& e : evaluate_samples(trainer.model(), data, cfg.dmax)) reps.push_back(e.report);
  const auto agg = aggregate(reps);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << std::setprecision(6) << "steps=" << log.size() << " final_loss=" << (log.empty() ? 0.0 : log.back().loss)
            << " train_epe=" << agg.epe << " train_d1=" << agg.d1 << " seconds=" << secs << '\n';
  return 0;
}

void write_report_row(std::ostream& os, const std::string& name, const EvalReport& r) {
  os << name << ',' << r.epe << ',' << r.d1 << ',' << r.bad.at(1.0) << ',' << r.bad.at(2.0) << ',' << r.bad.at(3.0)
     << ',' << r.valid_pixels << '\n';
}

int cmd_eval(const io::RunConfig& cfg, bool identity) {
  const auto data = dataset_for(cfg);
  if (data.empty()) throw UndefinedReport("evaluation set is empty");
  std::vector<EvalReport> reps;
  if (identity) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto b = make_batch(data, {i}, cfg.dmax);
      reps.push_back(evaluate(b.d_gt, b.d_gt, b.mask));
    }
  } else {
    auto model = load_model(cfg);
    for (const auto& e : evaluate_samples(model, data, cfg.dmax)) reps.push_back(e.report);
  }
  const std::string header = "sample,epe,d1,bad1,bad2,bad3,valid_pixels";
  auto csv = open_csv(fs::path(cfg.out) / "eval.csv", header);
  std::ostringstream rows;
  rows.imbue(std::locale::classic());
  rows << std::setprecision(9);
  for (std::size_t i = 0; i < reps.size(); ++i) write_report_row(rows, std::to_string(i), reps[i]);
  write_report_row(rows, "all", aggregate(reps));
  csv << rows.str();
  std::cout << header << '\n' << rows.str();
  return 0;
}

int cmd_infer(const io::RunConfig& cfg, const std::string& left, const std::string& right,
              const std::optional<std::string>& gt) {
  auto model = load_model(cfg);
  const auto l = io::read_rgb(left), r = io::read_rgb(right);
  if (l.shape() != r.shape())
    fail_shape("left ", to_string(l.shape()), " and right ", to_string(r.shape()), " differ in extent");
  const std::size_t H = l.extent(1), W = l.extent(2);
  if (H % 32 || W % 32) fail_shape("image extents ", H, "x", W, " must be multiples of 32");
  const auto d = predict_disparity(model, l.reshaped({1, 3, H, W}), r.reshaped({1, 3, H, W}));
  const auto map = d.reshaped({H, W});
  const fs::path out = cfg.out;
  fs::create_directories(out);
  io::write_pfm(out / "disparity.pfm", map);
  io::write_gray8(out / "disparity.png", map, static_cast<float>(cfg.dmax - 1));
  if (gt) {
    auto g = io::read_disparity(*gt);
    Tensor<float> mask(g.valid.shape());
    for (std::size_t i = 0; i < mask.size(); ++i)
      mask[i] = g.valid[i] != 0.0f && g.disparity[i] < static_cast<float>(cfg.dmax) ? 1.0f : 0.0f;
    std::cout << "epe=" << epe(map, g.disparity, mask) << '\n';
  }
  return 0;
}

int cmd_ablate(const io::RunConfig& cfg, std::size_t steps) {
  auto csv = open_csv(fs::path(cfg.out) / "ablation.csv", ablation_csv_header());
  std::cout << ablation_csv_header() << '\n';
  run_ablation(cfg, steps, 4, [&](const AblationRow& r) {
    const auto line = ablation_csv_row(r);
    csv << line << '\n';
    std::cout << line << std::endl;
  });
  return 0;
}

int cmd_gradcheck(const io::RunConfig& cfg, bool negative_control) {
  auto entries = default_grad_entries(cfg.seed);
  if (negative_control) entries.push_back(corrupted_grad_entry(cfg.seed));
  const auto rows = run_grad_suite(entries);
  bool ok = true;
  std::cout << "entry,max_rel_error,checked,skipped,seconds,status\n" << std::setprecision(3);
  for (const auto& r : rows) {
    std::cout << r.name << ',' << std::scientific << r.result.max_rel_error << std::defaultfloat << ','
              << r.result.checked << ',' << r.result.skipped << ',' << r.seconds << ','
              << (r.passed ? "pass" : "FAIL") << '\n';
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

int cmd_gen_data(const io::RunConfig& cfg) {
  const auto data = synthetic_set(cfg);
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::ostringstream name;
    name << std::setw(4) << std::setfill('0') << i;
    io::save_sample(cfg.out, name.str(), data[i]);
  }
  std::cout << "wrote " << data.size() << " samples to " << cfg.out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual cost-volume stereo matching on CPU"};
  app.require_subcommand(1);
  CommonFlags flags;

  auto* train = app.add_subcommand("train", "train on synthetic or on-disk pairs; writes loss.csv and checkpoint.bin");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint; writes eval.csv");
  auto* infer = app.add_subcommand("infer", "predict disparity for one pair; writes disparity.pfm/png");
  auto* ablate = app.add_subcommand("ablate", "run the ablation matrix; writes ablation.csv");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  auto* gen = app.add_subcommand("gen-data", "write synthetic pairs to --out");
  for (auto* s : {train, eval, infer, ablate, gradcheck, gen}) flags.attach(s);

  std::optional<std::string> checkpoint, data;
  for (auto* s : {eval, infer}) s->add_option("--checkpoint", checkpoint, "checkpoint file");
  for (auto* s : {train, eval}) s->add_option("--data", data, "dataset directory (default: synthetic)");
  bool identity = false, negative = false;
  eval->add_flag("--identity", identity, "score the ground truth against itself");
  gradcheck->add_flag("--negative-control", negative, "append an entry with a deliberately wrong gradient");
  std::string left, right;
  std::optional<std::string> gt;
  infer->add_option("--left", left, "left image (PNG)")->required();
  infer->add_option("--right", right, "right image (PNG)")->required();
  infer->add_option("--gt", gt, "ground-truth disparity (.pfm or .png)");

  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = flags.load();
    if (checkpoint) cfg.checkpoint = *checkpoint;
    if (data) cfg.data = *data;
    if (train->parsed()) return cmd_train(cfg);
    if (eval->parsed()) return cmd_eval(cfg, identity);
    if (infer->parsed()) return cmd_infer(cfg, left, right, gt);
    if (ablate->parsed()) return cmd_ablate(cfg, flags.steps ? cfg.steps : 50);
    if (gradcheck->parsed()) return cmd_gradcheck(cfg, negative);
    if (gen->parsed()) return cmd_gen_data(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
