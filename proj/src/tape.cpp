#include "amlp/tape.hpp"

#include <atomic>
#include <cmath>

namespace amlp {

namespace testing_hooks {
namespace {
std::atomic<double> g_softmax_backward_scale{1.0};
}
void set_softmax_backward_scale(double s) { g_softmax_backward_scale.store(s); }
double softmax_backward_scale() { return g_softmax_backward_scale.load(); }
}  // namespace testing_hooks

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(*this); }
bool Var::requires_grad() const { return tape_->requires_grad(*this); }

const Tensor& value_of(const Var& v) { return v.value(); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) { return push(Node{std::move(value), {}, false, {}}); }

Var Tape::parameter(Tensor value) { return push(Node{std::move(value), {}, true, {}}); }

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  if (consumed_) throw ContractError("tape already ran backward; record on a fresh tape");
  bool needs = false;
  for (const Var& in : inputs) {
    if (in.tape() != this) throw ContractError("operand belongs to a different tape");
    needs = needs || nodes_[in.id()].requires_grad;
  }
  if (!needs) backward = nullptr;
  return push(Node{std::move(value), {}, needs, std::move(backward)});
}

Tensor& Tape::grad_buffer(const Var& v) {
  Node& n = nodes_[v.id()];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

const Tensor& Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (!consumed_) throw ContractError("gradients are available only after backward()");
  return n.grad;
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw ContractError("loss belongs to a different tape");
  if (consumed_) throw ContractError("backward() may run only once per tape");
  if (value(loss).size() != 1) throw ContractError("backward() needs a scalar loss, got " + value(loss).shape().str());
  consumed_ = true;
  if (nodes_[loss.id()].requires_grad) {
    grad_buffer(loss)[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(*this, n.grad);
    }
  }
  for (Node& n : nodes_)
    if (n.requires_grad && n.grad.empty()) n.grad = Tensor(n.value.shape());
}

namespace {

Tape& tape_of(const Var& a) {
  if (a.tape() == nullptr) throw ContractError("operand is not attached to a tape");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw ContractError("operands belong to different tapes");
  return tape_of(a);
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  return t.record(matmul(a.value(), b.value()), {a, b}, [a, b](Tape& tape, const Tensor& g) {
    if (tape.requires_grad(a)) tape.grad_buffer(a).matrix().noalias() += g.matrix() * tape.value(b).matrix().transpose();
    if (tape.requires_grad(b)) tape.grad_buffer(b).matrix().noalias() += tape.value(a).matrix().transpose() * g.matrix();
  });
}

Var matmul_tn(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  return t.record(matmul_tn(a.value(), b.value()), {a, b}, [a, b](Tape& tape, const Tensor& g) {
    // out = aᵀb: da = b·gᵀ, db = a·g
    if (tape.requires_grad(a)) tape.grad_buffer(a).matrix().noalias() += tape.value(b).matrix() * g.matrix().transpose();
    if (tape.requires_grad(b)) tape.grad_buffer(b).matrix().noalias() += tape.value(a).matrix() * g.matrix();
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  return t.record(matmul_nt(a.value(), b.value()), {a, b}, [a, b](Tape& tape, const Tensor& g) {
    // out = a·bᵀ: da = g·b, db = gᵀ·a
    if (tape.requires_grad(a)) tape.grad_buffer(a).matrix().noalias() += g.matrix() * tape.value(b).matrix();
    if (tape.requires_grad(b)) tape.grad_buffer(b).matrix().noalias() += g.matrix().transpose() * tape.value(a).matrix();
  });
}

Var transpose(const Var& a) {
  Tape& t = tape_of(a);
  return t.record(transpose(a.value()), {a}, [a](Tape& tape, const Tensor& g) {
    tape.grad_buffer(a).matrix() += g.matrix().transpose();
  });
}

Var softmax(const Var& x) {
  Tape& t = tape_of(x);
  Tensor y = softmax(x.value());
  const std::size_t out_id = t.size();
  return t.record(std::move(y), {x}, [x, out_id](Tape& tape, const Tensor& g) {
    const auto y = tape.value(out_id).matrix();
    auto gm = g.matrix();
    auto dx = tape.grad_buffer(x).matrix();
    const double k = testing_hooks::softmax_backward_scale();
    for (Index r = 0; r < y.rows(); ++r) {
      const double dot = gm.row(r).dot(y.row(r));
      dx.row(r).array() += k * y.row(r).array() * (gm.row(r).array() - dot);
    }
  });
}

Var relu(const Var& x) {
  Tape& t = tape_of(x);
  return t.record(relu(x.value()), {x}, [x](Tape& tape, const Tensor& g) {
    const auto in = tape.value(x).matrix();
    tape.grad_buffer(x).matrix().array() += (in.array() > 0.0).select(g.matrix().array(), 0.0);
  });
}

Var add(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  return t.record(add(a.value(), b.value()), {a, b}, [a, b](Tape& tape, const Tensor& g) {
    if (tape.requires_grad(a)) tape.grad_buffer(a).matrix() += g.matrix();
    if (tape.requires_grad(b)) tape.grad_buffer(b).matrix() += g.matrix();
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  return t.record(sub(a.value(), b.value()), {a, b}, [a, b](Tape& tape, const Tensor& g) {
    if (tape.requires_grad(a)) tape.grad_buffer(a).matrix() += g.matrix();
    if (tape.requires_grad(b)) tape.grad_buffer(b).matrix() -= g.matrix();
  });
}

Var hadamard(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  return t.record(hadamard(a.value(), b.value()), {a, b}, [a, b](Tape& tape, const Tensor& g) {
    if (tape.requires_grad(a)) tape.grad_buffer(a).matrix() += g.matrix().cwiseProduct(tape.value(b).matrix());
    if (tape.requires_grad(b)) tape.grad_buffer(b).matrix() += g.matrix().cwiseProduct(tape.value(a).matrix());
  });
}

Var scale(const Var& a, double s) {
  Tape& t = tape_of(a);
  return t.record(scale(a.value(), s), {a}, [a, s](Tape& tape, const Tensor& g) {
    tape.grad_buffer(a).matrix() += s * g.matrix();
  });
}

Var add_row(const Var& x, const Var& bias) {
  Tape& t = tape_of(x, bias);
  return t.record(add_row(x.value(), bias.value()), {x, bias}, [x, bias](Tape& tape, const Tensor& g) {
    if (tape.requires_grad(x)) tape.grad_buffer(x).matrix() += g.matrix();
    if (tape.requires_grad(bias)) {
      Tensor& gb = tape.grad_buffer(bias);
      gb.matrix().reshaped(1, g.cols()) += g.matrix().colwise().sum();
    }
  });
}

Var sum(const Var& x) {
  Tape& t = tape_of(x);
  return t.record(sum(x.value()), {x}, [x](Tape& tape, const Tensor& g) {
    tape.grad_buffer(x).matrix().array() += g[0];
  });
}

Var concat(const Var& a, const Var& b, Axis axis) {
  Tape& t = tape_of(a, b);
  return t.record(concat(a.value(), b.value(), axis), {a, b}, [a, b, axis](Tape& tape, const Tensor& g) {
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    if (axis == Axis::cols) {
      if (tape.requires_grad(a)) tape.grad_buffer(a).matrix() += g.matrix().leftCols(av.cols());
      if (tape.requires_grad(b)) tape.grad_buffer(b).matrix() += g.matrix().rightCols(bv.cols());
    } else {
      if (tape.requires_grad(a)) tape.grad_buffer(a).matrix() += g.matrix().topRows(av.rows());
      if (tape.requires_grad(b)) tape.grad_buffer(b).matrix() += g.matrix().bottomRows(bv.rows());
    }
  });
}

Var block(const Var& x, Index row, Index rows, Index col, Index cols) {
  Tape& t = tape_of(x);
  return t.record(block(x.value(), row, rows, col, cols), {x}, [=](Tape& tape, const Tensor& g) {
    tape.grad_buffer(x).matrix().block(row, col, rows, cols) += g.matrix();
  });
}

Var assemble(std::span<const Var> blocks, Index grid_rows, Index grid_cols) {
  if (blocks.empty()) throw DimensionError("assemble: no blocks");
  Tape& t = tape_of(blocks.front());
  std::vector<Tensor> values;
  values.reserve(blocks.size());
  for (const Var& b : blocks) {
    tape_of(b, blocks.front());
    values.push_back(b.value());
  }
  Tensor out = assemble(std::span<const Tensor>(values), grid_rows, grid_cols);
  std::vector<Var> ids(blocks.begin(), blocks.end());
  return t.record(std::move(out), blocks, [ids = std::move(ids), grid_rows, grid_cols](Tape& tape, const Tensor& g) {
    Index r0 = 0;
    for (Index i = 0; i < grid_rows; ++i) {
      Index c0 = 0;
      const Index h = tape.value(ids[static_cast<std::size_t>(i * grid_cols)]).rows();
      for (Index j = 0; j < grid_cols; ++j) {
        const Var& b = ids[static_cast<std::size_t>(i * grid_cols + j)];
        const Index w = tape.value(b).cols();
        if (tape.requires_grad(b)) tape.grad_buffer(b).matrix() += g.matrix().block(r0, c0, h, w);
        c0 += w;
      }
      r0 += h;
    }
  });
}

Var tile_rows(const Var& x, Index times) {
  Tape& t = tape_of(x);
  return t.record(tile_rows(x.value(), times), {x}, [x, times](Tape& tape, const Tensor& g) {
    auto dx = tape.grad_buffer(x).matrix();
    const Index r = dx.rows();
    for (Index k = 0; k < times; ++k) dx += g.matrix().middleRows(k * r, r);
  });
}

Var gather_rows(const Var& table, std::span<const Index> indices) {
  Tape& t = tape_of(table);
  std::vector<Index> idx(indices.begin(), indices.end());
  Tensor out = gather_rows(table.value(), indices);
  return t.record(std::move(out), {table}, [table, idx = std::move(idx)](Tape& tape, const Tensor& g) {
    auto dt = tape.grad_buffer(table).matrix();
    for (std::size_t i = 0; i < idx.size(); ++i) dt.row(idx[i]) += g.matrix().row(static_cast<Index>(i));
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  Tape& t = tape_of(x, gain);
  tape_of(x, bias);
  return t.record(layer_norm(x.value(), gain.value(), bias.value(), eps), {x, gain, bias},
                  [x, gain, bias, eps](Tape& tape, const Tensor& g) {
                    const auto in = tape.value(x).matrix();
                    const Tensor& gv = tape.value(gain);
                    const Index d = in.cols();
                    Eigen::RowVectorXd xhat(d), dxhat(d);
                    for (Index r = 0; r < in.rows(); ++r) {
                      const double mean = in.row(r).sum() / double(d);
                      const double var = (in.row(r).array() - mean).square().sum() / double(d);
                      const double inv = 1.0 / std::sqrt(var + eps);
                      xhat = (in.row(r).array() - mean) * inv;
                      const auto gr = g.matrix().row(r);
                      if (tape.requires_grad(bias)) tape.grad_buffer(bias).matrix().reshaped(1, d) += gr;
                      if (tape.requires_grad(gain)) tape.grad_buffer(gain).matrix().reshaped(1, d) += gr.cwiseProduct(xhat);
                      if (tape.requires_grad(x)) {
                        for (Index c = 0; c < d; ++c) dxhat[c] = gr[c] * gv[c];
                        const double m1 = dxhat.mean();
                        const double m2 = dxhat.cwiseProduct(xhat).mean();
                        tape.grad_buffer(x).matrix().row(r).array() += inv * (dxhat.array() - m1 - xhat.array() * m2);
                      }
                    }
                  });
}

Var cross_entropy(const Var& logits, std::span<const Index> targets) {
  Tape& t = tape_of(logits);
  std::vector<Index> tg(targets.begin(), targets.end());
  Tensor out = cross_entropy(logits.value(), targets);
  return t.record(std::move(out), {logits}, [logits, tg = std::move(tg)](Tape& tape, const Tensor& g) {
    Tensor p = softmax(tape.value(logits));
    auto pm = p.matrix();
    const double k = g[0] / double(pm.rows());
    for (Index r = 0; r < pm.rows(); ++r) pm(r, tg[static_cast<std::size_t>(r)]) -= 1.0;
    tape.grad_buffer(logits).matrix() += k * pm;
  });
}

}  // namespace amlp
