#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

#include "mmfuse/tensor.hpp"

namespace mmfuse {

class Tape;

// Handle to a value recorded on a tape. Cheap to copy; valid for the
// lifetime of the tape that produced it.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  const std::vector<double>& grad() const;  // meaningful after Tape::backward
  Tape* tape() const { return tape_; }
  std::size_t index() const { return idx_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t idx) : tape_(tape), idx_(idx) {}
  Tape* tape_ = nullptr;
  std::size_t idx_ = 0;
};

// Dynamic reverse-mode tape. Every operation records its output tensor and
// a rule that routes the output gradient back to its operands; replaying
// the rules in reverse order accumulates gradients for every recorded
// tensor reachable from the loss. A fresh tape is built per forward pass,
// so data-dependent graph topology (e.g. per-sample gating) costs nothing.
// Nodes live in a deque so Var::value() references stay valid while more
// operations are recorded.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Constant input: gradients stop here.
  Var leaf(Tensor value);
  // Trainable input: after backward(), the node gradient is accumulated
  // into parameter.grad(). The parameter must outlive the tape.
  Var param(const Tensor& parameter);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  // Elementwise scale * x + shift.
  Var affine(Var a, double scale, double shift);
  // Broadcast-add a row vector to every row of a matrix.
  Var add_rowvec(Var m, Var row);
  Var relu(Var x);
  Var tanh(Var x);
  Var log(Var x);
  Var exp(Var x);
  Var clamp(Var x, double lo, double hi);
  // Row-wise softmax with max subtraction; input must be [n x K], K >= 2.
  Var softmax_rows(Var logits);
  Var concat_cols(const std::vector<Var>& parts);
  // out[r] = m[r, col[r]]; used to pick the true-class entry per sample.
  Var gather_cols(Var m, const std::vector<int>& col);
  Var sum(Var x);  // full reduction to a rank-0 scalar
  // Value copy with no path back to its inputs.
  Var detach(Var x);

  // Seeds d(loss)/d(loss) = 1 and replays all rules in reverse. The loss
  // must be scalar. Gradients of bound parameters are accumulated (+=) into
  // their grad buffers, so shared parameters and repeated subexpressions
  // add up; callers zero parameter grads when they want fresh ones.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::size_t idx) const { return nodes_[idx].value; }
  const std::vector<double>& grad(std::size_t idx) const { return nodes_[idx].grad; }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    std::function<void(Tape&)> backprop;  // empty for leaves
    const Tensor* external = nullptr;     // parameter binding
  };

  Var push(Tensor value, std::function<void(Tape&)> backprop);
  std::vector<double>& grad_buf(std::size_t idx) { return nodes_[idx].grad; }

  std::deque<Node> nodes_;
};

}  // namespace mmfuse
