#include "courier/diffcore/tape.hpp"

#include <string>

#include "courier/error.hpp"

namespace courier::diff {

const Tensor& Var::value() const { return tape_->node(id_).value; }

bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

const Tensor& Var::grad() const {
  const auto& n = tape_->node(id_);
  if (n.grad.size() != n.value.size()) {
    throw ContractError("gradient requested before backward() for entry " + std::to_string(id_));
  }
  return n.grad;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(const Tensor& parameter) {
  auto it = bound_params_.find(&parameter);
  if (it != bound_params_.end()) return Var(this, it->second);
  Var v = leaf(parameter, true);
  bound_params_.emplace(&parameter, v.id());
  return v;
}

Tensor Tape::grad_of(const Tensor& parameter) const {
  auto it = bound_params_.find(&parameter);
  if (it == bound_params_.end()) return Tensor(parameter.shape());
  const Node& n = nodes_[it->second];
  if (n.grad.size() != n.value.size()) return Tensor(parameter.shape());
  return n.grad;
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (in.tape() != this) throw ContractError("operation mixes entries from different tapes");
    n.inputs.push_back(in.id());
    n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw ContractError("backward() called with an entry from another tape");
  if (loss.value().size() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " +
                        shape_string(loss.value().shape()));
  }
  for (auto& n : nodes_) {
    if (n.requires_grad) {
      n.grad = Tensor(n.value.shape());
    } else {
      n.grad = Tensor();
    }
  }
  Node& root = nodes_[loss.id()];
  if (!root.requires_grad) return;
  root.grad.storage()[0] = 1.0;

  std::vector<Tensor*> input_grads;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward) continue;
    input_grads.clear();
    for (std::size_t in : n.inputs) {
      Node& src = nodes_[in];
      input_grads.push_back(src.requires_grad ? &src.grad : nullptr);
    }
    n.backward(n.value, n.grad, input_grads);
  }
}

}  // namespace courier::diff
