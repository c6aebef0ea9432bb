#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "courier/diffcore/tensor.hpp"

namespace courier::diff {

class Tape;

// Handle to one value recorded on a Tape. Cheap to copy; valid while the tape
// lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  // Gradient buffer filled by Tape::backward. Zero-filled for entries that
  // do not influence the loss.
  const Tensor& grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Receives the op's output value, the output gradient and one gradient buffer
// per input. A buffer is null when that input does not require a gradient.
// Implementations accumulate (+=) into the buffers.
using BackwardFn = std::function<void(const Tensor& out, const Tensor& grad_out,
                                      std::span<Tensor* const> input_grads)>;

// Ordered record of executed operations. Entries are appended in execution
// order, so reverse iteration is a valid topological order for backward.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf holding a copy of `value`.
  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Leaf bound to an externally owned parameter. Repeated calls with the same
  // tensor return the same entry, so gradients from every use accumulate.
  Var param(const Tensor& parameter);
  // Gradient accumulated for a parameter bound via param(); zeros if the
  // parameter was never bound or not reached.
  Tensor grad_of(const Tensor& parameter) const;

  // Appends an operation result. `backward` may be empty for ops that are not
  // differentiable with respect to any input.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  // Reverse-mode pass from a scalar entry. Resets all gradients first.
  void backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;

  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  const Node& node(std::size_t id) const { return nodes_[id]; }

  // deque keeps references to values stable while the tape grows; backward
  // closures capture them by reference.
  std::deque<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> bound_params_;
};

}  // namespace courier::diff
