#include "vlg/tape.hpp"

#include <atomic>

namespace vlg::ad {

namespace {
std::atomic<bool> g_check_finite{true};
}  // namespace

void set_check_finite(bool enabled) { g_check_finite.store(enabled, std::memory_order_relaxed); }
bool check_finite() { return g_check_finite.load(std::memory_order_relaxed); }

Tape& Var::tape() const {
  if (!tape_) throw std::logic_error("var: not bound to a tape");
  return *tape_;
}

const Tensor& Var::value() const { return tape().value(*this); }
bool Var::requires_grad() const { return tape().requires_grad(*this); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.op = "leaf";
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (check_finite() && !value.all_finite()) {
    throw NonFiniteError(std::string(op) + ": produced a non-finite value");
  }
  Node node;
  node.op = op;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    check(in);
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  if (node.requires_grad && !node.backward) {
    throw std::logic_error(std::string(op) + ": differentiable inputs but no backward rule");
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::check(Var v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw std::logic_error("tape: var belongs to a different tape");
  }
}

const Tensor& Tape::value(Var v) const {
  check(v);
  return nodes_[v.id_].value;
}

bool Tape::requires_grad(Var v) const {
  check(v);
  return nodes_[v.id_].requires_grad;
}

Gradients Tape::backward(Var loss) const {
  check(loss);
  if (nodes_[loss.id_].value.size() != 1) {
    throw DimensionError("backward: loss must be a scalar, got shape " +
                         shape_string(nodes_[loss.id_].value.shape()));
  }
  Gradients result;
  result.tape_ = this;
  result.grads_.resize(loss.id_ + 1);
  result.present_.assign(loss.id_ + 1, false);
  result.grads_[loss.id_] = Tensor::filled(nodes_[loss.id_].value.shape(), 1.0);
  result.present_[loss.id_] = true;

  std::vector<const Tensor*> inputs;
  std::vector<Tensor*> grad_inputs;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!result.present_[i] || !node.requires_grad || node.inputs.empty()) continue;
    inputs.clear();
    grad_inputs.clear();
    for (std::size_t in : node.inputs) {
      inputs.push_back(&nodes_[in].value);
      if (nodes_[in].requires_grad) {
        if (!result.present_[in]) {
          result.grads_[in] = Tensor::zeros(nodes_[in].value.shape());
          result.present_[in] = true;
        }
        grad_inputs.push_back(&result.grads_[in]);
      } else {
        grad_inputs.push_back(nullptr);
      }
    }
    node.backward(BackwardArgs{inputs, node.value, result.grads_[i], grad_inputs});
  }
  return result;
}

Tensor Gradients::wrt(Var v) const {
  if (const Tensor* g = find(v)) return *g;
  return Tensor::zeros(v.shape());
}

const Tensor* Gradients::find(Var v) const {
  if (&v.tape() != tape_) throw std::logic_error("gradients: var from a different tape");
  if (v.id() < present_.size() && present_[v.id()]) return &grads_[v.id()];
  return nullptr;
}

}  // namespace vlg::ad
