#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualcv/tensor.hpp"

namespace dualcv {

template <class T>
class Tape;

/// Handle to a tensor recorded on a tape.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  std::size_t id() const noexcept { return id_; }
  Tape<T>& tape() const { return *tape_; }
  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  /// Null when backward never reached this tensor.
  const Tensor<T>* grad() const { return tape_->grad(id_); }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode autodiff record. Nodes are appended in creation order and
/// replayed backwards exactly once per backward() call.
template <class T>
class Tape {
 public:
  /// Receives the output gradient; accumulates into inputs through the tape.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> v) { return push(std::move(v), false, {}, nullptr, "constant"); }
  Var<T> leaf(Tensor<T> v) { return push(std::move(v), true, {}, nullptr, "leaf"); }

  /// Records an op output. No node is kept when no input requires a gradient.
  Var<T> record(Tensor<T> out, std::vector<std::size_t> inputs, BackwardFn fn, std::string op) {
    bool needs = false;
    for (auto i : inputs) needs = needs || entries_.at(i).requires_grad;
    if (!needs) return push(std::move(out), false, {}, nullptr, std::move(op));
    return push(std::move(out), true, std::move(inputs), std::move(fn), std::move(op));
  }

  const Tensor<T>& value(std::size_t id) const { return entries_.at(id).value; }
  bool requires_grad(std::size_t id) const { return entries_.at(id).requires_grad; }
  const Tensor<T>* grad(std::size_t id) const {
    const auto& g = entries_.at(id).grad;
    return g ? &*g : nullptr;
  }
  const std::string& op_name(std::size_t id) const { return entries_.at(id).op; }
  std::size_t size() const noexcept { return entries_.size(); }

  void accumulate(std::size_t id, const Tensor<T>& g) {
    auto& e = entries_.at(id);
    if (!e.requires_grad) return;
    e.value.require_same_shape(g, "gradient accumulate");
    if (e.grad)
      *e.grad += g;
    else
      e.grad = g;
  }
  void accumulate(std::size_t id, Tensor<T>&& g) {
    auto& e = entries_.at(id);
    if (!e.requires_grad) return;
    e.value.require_same_shape(g, "gradient accumulate");
    if (e.grad)
      *e.grad += g;
    else
      e.grad = std::move(g);
  }

  void backward(const Var<T>& loss) {
    if (backward_done_) throw std::logic_error("backward called twice without reset()");
    if (&loss.tape() != this) throw std::invalid_argument("loss belongs to a different tape");
    const auto& lv = value(loss.id());
    if (lv.size() != 1) fail_shape("backward requires a scalar loss, got ", to_string(lv.shape()));
    backward_done_ = true;
    if (!requires_grad(loss.id())) return;
    entries_[loss.id()].grad = Tensor<T>(lv.shape(), T{1});
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      auto& e = entries_[id];
      if (!e.grad || !e.backward) continue;
      e.backward(*this, *e.grad);
    }
  }

  /// Drops all gradients so backward() may run again.
  void reset() {
    for (auto& e : entries_) e.grad.reset();
    backward_done_ = false;
  }

 private:
  struct Entry {
    Tensor<T> value;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::string op;
    std::optional<Tensor<T>> grad;
  };

  Var<T> push(Tensor<T> v, bool rg, std::vector<std::size_t> inputs, BackwardFn fn, std::string op) {
    entries_.push_back(Entry{std::move(v), rg, std::move(inputs), std::move(fn), std::move(op), std::nullopt});
    return Var<T>(this, entries_.size() - 1);
  }

  // deque: stable references across push_back
  std::deque<Entry> entries_;
  bool backward_done_ = false;
};

}  // namespace dualcv
