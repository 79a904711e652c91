#pragma once

#include <cmath>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "dualcv/ops/conv.hpp"
#include "dualcv/ops/elementwise.hpp"
#include "dualcv/ops/norm.hpp"

namespace dualcv {

/// Named tensors owned by a model: trainable parameters plus buffers
/// (batch-norm running statistics). Layers refer to entries by index.
template <class T>
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    bool trainable = true;
  };

  std::size_t add(std::string name, Tensor<T> value, bool trainable = true) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.push_back(Entry{std::move(name), std::move(value), trainable});
    return entries_.size() - 1;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  Entry& operator[](std::size_t i) { return entries_.at(i); }
  const Entry& operator[](std::size_t i) const { return entries_.at(i); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.value.size();
    return n;
  }

  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>(), e.trainable);
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// One forward pass: the tape, the parameters bound onto it, and the mode.
template <class T>
struct Context {
  Tape<T>& tape;
  ParamSet<T>& params;
  Mode mode = Mode::train;
  std::vector<Var<T>> bound;

  /// With `grad` false every entry binds as a constant and no graph is kept.
  Context(Tape<T>& t, ParamSet<T>& p, Mode m, bool grad = true) : tape(t), params(p), mode(m) {
    bound.reserve(p.size());
    for (auto& e : p) bound.push_back(grad && e.trainable ? tape.leaf(e.value) : tape.constant(e.value));
  }

  const Var<T>& operator()(std::size_t i) const { return bound.at(i); }
};

/// Layer builders register their tensors with a deterministic initialiser.
template <class T>
class Builder {
 public:
  Builder(ParamSet<T>& params, std::uint64_t seed) : params_(params), rng_(seed) {}

  /// Uniform in +-sqrt(6 / fan_in).
  Tensor<T> fan_in_uniform(Shape s) {
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < s.size(); ++i) fan_in *= s[i];
    return uniform(std::move(s), std::sqrt(6.0 / static_cast<double>(fan_in)));
  }

  Tensor<T> uniform(Shape s, double bound) {
    Tensor<T> t(std::move(s));
    std::uniform_real_distribution<double> d(-bound, bound);
    for (auto& v : t.values()) v = static_cast<T>(d(rng_));
    return t;
  }

  ParamSet<T>& params() { return params_; }
  std::mt19937_64& rng() { return rng_; }

 private:
  ParamSet<T>& params_;
  std::mt19937_64 rng_;
};

template <class T>
struct BatchNormLayer {
  std::size_t gamma = 0, beta = 0, mean = 0, var = 0;

  static BatchNormLayer make(Builder<T>& b, const std::string& name, std::size_t channels) {
    auto& p = b.params();
    BatchNormLayer l;
    l.gamma = p.add(name + ".gamma", Tensor<T>::ones({channels}));
    l.beta = p.add(name + ".beta", Tensor<T>::zeros({channels}));
    l.mean = p.add(name + ".running_mean", Tensor<T>::zeros({channels}), false);
    l.var = p.add(name + ".running_var", Tensor<T>::ones({channels}), false);
    return l;
  }

  Var<T> operator()(Context<T>& ctx, const Var<T>& x) const {
    return batch_norm(x, ctx(gamma), ctx(beta), ctx.params[mean].value, ctx.params[var].value, ctx.mode);
  }
};

/// 2-D or 3-D convolution layer (rank follows the kernel shape).
template <class T>
struct ConvLayer {
  std::size_t weight = 0;
  std::optional<std::size_t> bias;
  ConvSpec spec;
  bool transposed = false;

  static ConvLayer make(Builder<T>& b, const std::string& name, Shape kernel_shape, ConvSpec spec, bool with_bias,
                        bool transposed = false) {
    ConvLayer l;
    l.spec = spec;
    l.transposed = transposed;
    Tensor<T> w;
    if (transposed) {
      // [Cin, Cout, k...]: the fan-in of the adjoint conv is Cin * k^3 / stride^3.
      std::size_t fan = kernel_shape[0];
      for (std::size_t i = 2; i < kernel_shape.size(); ++i) fan *= kernel_shape[i];
      std::size_t s3 = spec.stride[0] * spec.stride[1] * spec.stride[2];
      w = b.uniform(kernel_shape, std::sqrt(6.0 * static_cast<double>(s3) / static_cast<double>(fan)));
    } else {
      w = b.fan_in_uniform(kernel_shape);
    }
    const std::size_t out_ch = transposed ? kernel_shape[1] : kernel_shape[0];
    l.weight = b.params().add(name + ".weight", std::move(w));
    if (with_bias) l.bias = b.params().add(name + ".bias", Tensor<T>::zeros({out_ch}));
    return l;
  }

  Var<T> operator()(Context<T>& ctx, const Var<T>& x) const {
    std::optional<Var<T>> bv;
    if (bias) bv = ctx(*bias);
    const auto& w = ctx(weight);
    if (transposed) return conv3d_transposed(x, w, bv, spec);
    if (w.shape().size() == 4) return conv2d(x, w, bv, spec.stride[1], spec.pad[1], spec.dilation[1]);
    return conv3d(x, w, bv, spec);
  }
};

/// Convolution (no bias) + batch norm + optional leaky ReLU.
template <class T>
struct ConvBn {
  ConvLayer<T> conv;
  BatchNormLayer<T> bn;
  bool activate = true;

  static ConvBn make(Builder<T>& b, const std::string& name, Shape kernel_shape, ConvSpec spec, bool activate = true,
                     bool transposed = false) {
    const std::size_t out_ch = transposed ? kernel_shape[1] : kernel_shape[0];
    return ConvBn{ConvLayer<T>::make(b, name + ".conv", std::move(kernel_shape), spec, false, transposed),
                  BatchNormLayer<T>::make(b, name + ".bn", out_ch), activate};
  }

  Var<T> operator()(Context<T>& ctx, const Var<T>& x) const {
    auto y = bn(ctx, conv(ctx, x));
    return activate ? leaky_relu(y, T(0.01)) : y;
  }
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over the trainable entries of a ParamSet.
template <class T>
class Adam {
 public:
  Adam(const ParamSet<T>& params, AdamOptions opt) : opt_(opt) {
    for (const auto& e : params) {
      m_.emplace_back(e.value.shape());
      v_.emplace_back(e.value.shape());
    }
  }

  void step(ParamSet<T>& params, const std::vector<Var<T>>& bound) {
    ++t_;
    const double bc1 = 1 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& e = params[i];
      if (!e.trainable) continue;
      const Tensor<T>* g = bound[i].grad();
      if (!g) continue;
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < e.value.size(); ++k) {
        const double gk = (*g)[k];
        m[k] = static_cast<T>(opt_.beta1 * m[k] + (1 - opt_.beta1) * gk);
        v[k] = static_cast<T>(opt_.beta2 * v[k] + (1 - opt_.beta2) * gk * gk);
        const double mh = m[k] / bc1, vh = v[k] / bc2;
        e.value[k] -= static_cast<T>(opt_.lr * mh / (std::sqrt(vh) + opt_.eps));
      }
    }
  }

  std::size_t steps() const noexcept { return t_; }
  AdamOptions& options() noexcept { return opt_; }

 private:
  AdamOptions opt_;
  std::vector<Tensor<T>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace dualcv
