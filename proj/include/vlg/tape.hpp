#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vlg/tensor.hpp"

namespace vlg::ad {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const;
  std::size_t id() const { return id_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  double item() const { return value().item(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = std::numeric_limits<std::size_t>::max();
};

/// What a backward rule sees. `grad_inputs[i]` is null when input i needs no gradient;
/// otherwise rules accumulate (+=) into it.
struct BackwardArgs {
  std::span<const Tensor* const> inputs;
  const Tensor& output;
  const Tensor& grad_output;
  std::span<Tensor* const> grad_inputs;
};

using BackwardFn = std::function<void(const BackwardArgs&)>;

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Gradients produced by one backward sweep, indexed by tape node.
class Gradients {
 public:
  /// Gradient of the loss w.r.t. `v`; zeros when `v` was not reachable.
  Tensor wrt(Var v) const;
  /// Pointer to the stored gradient, or null if `v` was unreachable.
  const Tensor* find(Var v) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::vector<Tensor> grads_;
  std::vector<bool> present_;
};

/// Define-by-run reverse-mode tape. Nodes are appended in evaluation order, so the
/// node list is always topologically sorted. One tape per training step and thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var constant(double value) { return leaf(Tensor::scalar(value), false); }

  /// Appends an op node. `backward` may be empty for ops with no differentiable inputs.
  Var record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a one-element loss. Each node is visited at most once.
  Gradients backward(Var loss) const;

 private:
  struct Node {
    const char* op = "";
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  void check(Var v) const;

  std::deque<Node> nodes_;  // stable references across appends
};

/// Global NaN/Inf check applied to every recorded op output. Default on.
void set_check_finite(bool enabled);
bool check_finite();

/// RAII toggle for the finite check.
class FiniteCheckScope {
 public:
  explicit FiniteCheckScope(bool enabled) : previous_(check_finite()) { set_check_finite(enabled); }
  ~FiniteCheckScope() { set_check_finite(previous_); }
  FiniteCheckScope(const FiniteCheckScope&) = delete;
  FiniteCheckScope& operator=(const FiniteCheckScope&) = delete;

 private:
  bool previous_;
};

}  // namespace vlg::ad
