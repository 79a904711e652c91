#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>

#include "dualcv/model.hpp"

namespace dualcv::io {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Everything a CLI run needs. Model hyperparameters map onto ModelConfig.
struct RunConfig {
  std::size_t dmax = 48;
  std::size_t ng = 4;
  VolumeKind upper = VolumeKind::gwc_dot;
  std::optional<VolumeKind> lower = VolumeKind::norm_corr;
  std::array<bool, 3> coupling{true, true, true};
  std::string preset = "toy";
  std::uint64_t seed = 1;

  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double lambda0 = 0.3;
  double lambda1 = 1.0;
  std::size_t steps = 2000;
  std::size_t batch = 1;
  std::size_t log_every = 50;
  std::size_t checkpoint_every = 500;

  std::size_t height = 64;
  std::size_t width = 128;
  std::size_t samples = 20;
  /// Synthetic pairs with an all-zero disparity field.
  bool zero_disparity = false;

  std::string out = "out";
  std::string data;        // directory of on-disk samples; empty = synthetic
  std::string checkpoint;  // checkpoint to load (eval/infer)

  BackboneConfig backbone() const {
    if (preset == "toy") return BackboneConfig::toy();
    if (preset == "full") return BackboneConfig::full();
    throw ConfigError("preset: must be toy or full (got '" + preset + "')");
  }

  ModelConfig model() const {
    ModelConfig m;
    m.backbone = backbone();
    m.hourglass.coupling = coupling;
    m.dmax = dmax;
    m.groups = ng;
    m.upper = upper;
    m.lower = lower;
    m.seed = seed;
    return m;
  }

  AdamOptions adam() const { return {lr, beta1, beta2, 1e-8}; }
  LossWeights loss_weights() const { return {lambda0, lambda1}; }

  void validate() const {
    auto bad = [](const std::string& key, const std::string& why) { throw ConfigError(key + ": " + why); };
    if (dmax == 0 || dmax % 4) bad("dmax", "must be a positive multiple of 4 (got " + std::to_string(dmax) + ")");
    const auto total = backbone().total_channels();
    if (ng == 0 || total % ng)
      bad("ng", "must divide the " + std::to_string(total) + " feature channels (got " + std::to_string(ng) + ")");
    if (lower && *lower == upper) bad("lower", "must differ from upper (both " + std::string(to_string(upper)) + ")");
    if (!(lr > 0)) bad("lr", "must be positive");
    if (!(beta1 >= 0 && beta1 < 1)) bad("beta1", "must lie in [0, 1)");
    if (!(beta2 >= 0 && beta2 < 1)) bad("beta2", "must lie in [0, 1)");
    if (!(lambda0 >= 0)) bad("lambda0", "must be nonnegative");
    if (!(lambda1 >= 0)) bad("lambda1", "must be nonnegative");
    if (batch == 0) bad("batch", "must be positive");
    if (height == 0 || height % 32) bad("height", "must be a positive multiple of 32");
    if (width == 0 || width % 32) bad("width", "must be a positive multiple of 32");
    if (samples == 0) bad("samples", "must be positive");
    if (dmax / 4 < 2) bad("dmax", "must be at least 8 for top-2 regression");
  }
};

inline std::string coupling_string(const std::array<bool, 3>& c) {
  return std::string{c[0] ? '1' : '0', c[1] ? '1' : '0', c[2] ? '1' : '0'};
}

namespace detail {

inline std::string trim(std::string s) {
  auto ws = [](unsigned char c) { return std::isspace(c); };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
  return s;
}

template <class N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || p != end) throw ConfigError(key + ": '" + v + "' is not a valid number");
  return out;
}

}  // namespace detail

/// Applies one key=value setting. Unknown keys are rejected.
inline void set_option(RunConfig& c, const std::string& key, const std::string& raw) {
  using detail::parse_number;
  const std::string v = detail::trim(raw);
  using Setter = std::function<void()>;
  auto kind = [&](const std::string& k) {
    auto parsed = parse_volume_kind(v);
    if (!parsed) throw ConfigError(k + ": unknown volume kind '" + v + "'");
    return *parsed;
  };
  const std::map<std::string, Setter> table{
      {"dmax", [&] { c.dmax = parse_number<std::size_t>(key, v); }},
      {"ng", [&] { c.ng = parse_number<std::size_t>(key, v); }},
      {"upper", [&] { c.upper = kind(key); }},
      {"lower", [&] { c.lower = v == "none" ? std::nullopt : std::optional<VolumeKind>(kind(key)); }},
      {"coupling",
       [&] {
         if (v.size() != 3 || v.find_first_not_of("01") != std::string::npos)
           throw ConfigError("coupling: expected three 0/1 flags such as 111 (got '" + v + "')");
         for (int i = 0; i < 3; ++i) c.coupling[i] = v[i] == '1';
       }},
      {"preset", [&] { c.preset = v; }},
      {"seed", [&] { c.seed = parse_number<std::uint64_t>(key, v); }},
      {"lr", [&] { c.lr = parse_number<double>(key, v); }},
      {"beta1", [&] { c.beta1 = parse_number<double>(key, v); }},
      {"beta2", [&] { c.beta2 = parse_number<double>(key, v); }},
      {"lambda0", [&] { c.lambda0 = parse_number<double>(key, v); }},
      {"lambda1", [&] { c.lambda1 = parse_number<double>(key, v); }},
      {"steps", [&] { c.steps = parse_number<std::size_t>(key, v); }},
      {"batch", [&] { c.batch = parse_number<std::size_t>(key, v); }},
      {"log_every", [&] { c.log_every = parse_number<std::size_t>(key, v); }},
      {"checkpoint_every", [&] { c.checkpoint_every = parse_number<std::size_t>(key, v); }},
      {"height", [&] { c.height = parse_number<std::size_t>(key, v); }},
      {"width", [&] { c.width = parse_number<std::size_t>(key, v); }},
      {"samples", [&] { c.samples = parse_number<std::size_t>(key, v); }},
      {"zero_disparity",
       [&] {
         if (v != "0" && v != "1") throw ConfigError("zero_disparity: expected 0 or 1 (got '" + v + "')");
         c.zero_disparity = v == "1";
       }},
      {"out", [&] { c.out = v; }},
      {"data", [&] { c.data = v; }},
      {"checkpoint", [&] { c.checkpoint = v; }},
  };
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second();
}

/// key=value lines, '#' starts a comment. Later lines win.
inline RunConfig parse_config(std::istream& in, RunConfig base = {}) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    set_option(base, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return base;
}

inline RunConfig parse_config_text(const std::string& text, RunConfig base = {}) {
  std::istringstream in(text);
  return parse_config(in, std::move(base));
}

inline RunConfig parse_config_file(const std::filesystem::path& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_config(in, std::move(base));
}

/// File (if any) first, then overrides in order; the result is validated.
inline RunConfig load_config(const std::optional<std::filesystem::path>& file,
                             const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig c = file ? parse_config_file(*file) : RunConfig{};
  for (const auto& [k, v] : overrides) set_option(c, k, v);
  c.validate();
  return c;
}

inline std::string dump_config(const RunConfig& c) {
  std::ostringstream os;
  os << "dmax=" << c.dmax << "\nng=" << c.ng << "\nupper=" << to_string(c.upper)
     << "\nlower=" << (c.lower ? std::string(to_string(*c.lower)) : std::string("none")) << "\ncoupling=" << coupling_string(c.coupling)
     << "\npreset=" << c.preset << "\nseed=" << c.seed << "\nlr=" << c.lr << "\nbeta1=" << c.beta1
     << "\nbeta2=" << c.beta2 << "\nlambda0=" << c.lambda0 << "\nlambda1=" << c.lambda1 << "\nsteps=" << c.steps
     << "\nbatch=" << c.batch << "\nheight=" << c.height << "\nwidth=" << c.width << "\nsamples=" << c.samples
     << "\nzero_disparity=" << (c.zero_disparity ? 1 : 0) << '\n';
  return os.str();
}

}  // namespace dualcv::io
