// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.

#pragma once

#include <deque>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "faclstm/tensor.hpp"

namespace facl::ag {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only meaningful while
// the owning tape is alive.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

using Gradients = std::map<std::string, Tensor>;

// Records a computation graph as it is evaluated and replays it backwards.
// A tape belongs to one training step on one thread.
class Tape {
 public:
  // Receives the upstream gradient and the node's own output; must call
  // accumulate() for each input that requires a gradient.
  using BackwardFn = std::function<void(Tape&, const Tensor& grad, const Tensor& out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // A named leaf whose gradient is reported by backward(). Names must be unique.
  Var parameter(const std::string& name, Tensor value);

  // Appends an op result. fn is kept only if some input requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);

  const Tensor& value(Var v) const { return nodes_[static_cast<size_t>(v.id_)].value; }
  bool requires_grad(Var v) const { return nodes_[static_cast<size_t>(v.id_)].requires_grad; }
  void accumulate(Var v, const Tensor& grad);

  // Gradient of a one-element loss with respect to every registered parameter.
  // Parameters the loss does not depend on get zero tensors.
  Gradients backward(Var loss);

  size_t size() const { return nodes_.size(); }

  // Test hook: when set, conv2d kernel gradients are deliberately perturbed.
  void set_corrupt_backward(bool on) { corrupt_backward_ = on; }
  bool corrupt_backward() const { return corrupt_backward_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
    std::string name;  // non-empty for parameters
  };

  Var push(Node node);

  std::deque<Node> nodes_;
  std::vector<int> parameters_;
  bool corrupt_backward_ = false;
};

// Recorded operations. Each mirrors the pure function of the same name in
// tensor.hpp and registers its adjoint.
Var conv2d(Var x, Var kernel, Var bias, int stride = 1);
Var conv2d(Var x, Var kernel, int stride = 1);
Var add(Var a, Var b);
Var add_channel_bias(Var x, Var bias);  // bias: (C), broadcast over N,H,W
Var scale(Var x, double factor);
Var hadamard(Var a, Var b);
Var sigmoid(Var x);
Var tanh(Var x);
Var relu(Var x);
Var spatial_softmax(Var z);
Var concat_channels(Var a, Var b);
Var slice_channels(Var x, int64_t begin, int64_t count);
Var upsample_nearest2(Var x);
Var flatten(Var x);  // (N, ...) -> (N, D)
Var dense(Var x, Var w, Var bias);
Var sum(Var x);  // -> scalar

// Mean over rows of -sum_k target[r,k] * log softmax(logits)[r,k].
// logits and targets are (N, K). Log-probabilities are floored at log(1e-12);
// each floored entry with a positive target bumps *floor_hits when given.
Var softmax_cross_entropy(Var logits, const Tensor& targets, int64_t* floor_hits = nullptr);

// Batch mean of 0.01 * (1 - 2*sum(m*p) / (sum(m) + sum(p) + 1e-8)), the sums
// taken per batch item, for ground truth m and prediction p of equal shape.
Var dice_mask_loss(const Tensor& truth, Var pred);

}  // namespace facl::ag
