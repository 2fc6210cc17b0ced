#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "amlp/tensor.hpp"

namespace amlp {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid only while
/// its Tape is alive and only together with that Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  /// Gradient after backward(); zeros for unreached requires-grad vars.
  const Tensor& grad() const;
  bool requires_grad() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

const Tensor& value_of(const Var& v);

/// Record of a computation for reverse-mode differentiation. Build once,
/// call backward() once.
class Tape {
 public:
  /// Receives the tape and the gradient flowing into the operation's output.
  using BackwardFn = std::function<void(Tape&, const Tensor&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(Tensor value);

  /// Appends an operation's output. The backward rule runs only when the
  /// output requires gradient, which it does iff any input does.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  void backward(const Var& loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& value(const Var& v) const { return nodes_[v.id()].value; }
  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }
  const Tensor& grad(const Var& v) const;

  /// Zero-initialized on first use. For backward rules only.
  Tensor& grad_buffer(const Var& v);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

namespace testing_hooks {
/// Multiplier applied inside the softmax backward rule. 1.0 in normal
/// operation; the verify suite's negative control sets it to 1.01.
void set_softmax_backward_scale(double s);
double softmax_backward_scale();
}  // namespace testing_hooks

// Differentiable counterparts of the tensor free functions.
Var matmul(const Var& a, const Var& b);
Var matmul_tn(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& a);
Var softmax(const Var& x);
Var relu(const Var& x);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_row(const Var& x, const Var& bias);
Var sum(const Var& x);
Var concat(const Var& a, const Var& b, Axis axis);
Var block(const Var& x, Index row, Index rows, Index col, Index cols);
Var assemble(std::span<const Var> blocks, Index grid_rows, Index grid_cols);
Var tile_rows(const Var& x, Index times);
Var gather_rows(const Var& table, std::span<const Index> indices);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
Var cross_entropy(const Var& logits, std::span<const Index> targets);

}  // namespace amlp
