#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "amlp/errors.hpp"

namespace amlp {

using Index = Eigen::Index;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixRef = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixRef = Eigen::Map<const RowMatrix<Scalar>>;

/// Extents of a rank 1..3 tensor, outermost first.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<Index> extents) {
    if (extents.size() < 1 || extents.size() > 3)
      throw DimensionError("tensor rank must be 1, 2 or 3");
    for (Index e : extents) {
      if (e <= 0) throw DimensionError("tensor extents must be positive");
      extents_[rank_++] = e;
    }
  }

  int rank() const { return rank_; }
  Index operator[](int axis) const { return extents_[axis]; }
  Index size() const {
    Index n = rank_ == 0 ? 0 : 1;
    for (int i = 0; i < rank_; ++i) n *= extents_[i];
    return n;
  }
  /// Rows of the matrix view: all leading extents flattened.
  Index rows() const { return rank_ <= 1 ? (rank_ == 0 ? 0 : 1) : size() / extents_[rank_ - 1]; }
  Index cols() const { return rank_ == 0 ? 0 : extents_[rank_ - 1]; }

  bool operator==(const Shape& other) const {
    if (rank_ != other.rank_) return false;
    for (int i = 0; i < rank_; ++i)
      if (extents_[i] != other.extents_[i]) return false;
    return true;
  }

  std::string str() const {
    std::string s = "[";
    for (int i = 0; i < rank_; ++i) {
      if (i) s += "x";
      s += std::to_string(extents_[i]);
    }
    return s + "]";
  }

 private:
  std::array<Index, 3> extents_{};
  int rank_ = 0;
};

/// Dense row-major tensor. Storage lives in a std::vector so allocations go
/// through operator new; math goes through Eigen maps of that storage.
/// A default-constructed tensor is empty (rank 0) and only valid as a
/// placeholder.
template <typename Scalar>
class BasicTensor {
 public:
  using scalar_type = Scalar;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape) : shape_(shape), data_(static_cast<std::size_t>(shape.size()), Scalar(0)) {}
  BasicTensor(Shape shape, std::vector<Scalar> data) : shape_(shape), data_(std::move(data)) {
    if (static_cast<Index>(data_.size()) != shape_.size())
      throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " + shape_.str());
    check_finite();
  }

  static BasicTensor zeros(Index rows, Index cols) { return BasicTensor(Shape{rows, cols}); }
  static BasicTensor constant(Shape shape, Scalar v) {
    BasicTensor t(shape);
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }
  static BasicTensor identity(Index n) {
    BasicTensor t(Shape{n, n});
    for (Index i = 0; i < n; ++i) t(i, i) = Scalar(1);
    return t;
  }
  static BasicTensor vector(std::initializer_list<Scalar> values) {
    return BasicTensor(Shape{static_cast<Index>(values.size())}, std::vector<Scalar>(values));
  }
  static BasicTensor from_rows(std::initializer_list<std::initializer_list<Scalar>> rows) {
    const Index r = static_cast<Index>(rows.size());
    const Index c = r ? static_cast<Index>(rows.begin()->size()) : 0;
    std::vector<Scalar> data;
    data.reserve(static_cast<std::size_t>(r * c));
    for (const auto& row : rows) {
      if (static_cast<Index>(row.size()) != c) throw DimensionError("ragged row literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return BasicTensor(Shape{r, c}, std::move(data));
  }
  template <typename Derived>
  static BasicTensor from_matrix(const Eigen::MatrixBase<Derived>& m) {
    BasicTensor t(Shape{m.rows(), m.cols()});
    t.matrix() = m;
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return shape_.rank(); }
  Index extent(int axis) const { return shape_[axis]; }
  Index rows() const { return shape_.rows(); }
  Index cols() const { return shape_.cols(); }
  Index size() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty(); }

  std::span<Scalar> data() { return data_; }
  std::span<const Scalar> data() const { return data_; }
  Scalar& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  Scalar operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }
  Scalar& operator()(Index r, Index c) { return data_[static_cast<std::size_t>(r * cols() + c)]; }
  Scalar operator()(Index r, Index c) const { return data_[static_cast<std::size_t>(r * cols() + c)]; }

  /// Matrix view with all leading extents flattened into rows.
  MatrixRef<Scalar> matrix() { return MatrixRef<Scalar>(data_.data(), rows(), cols()); }
  ConstMatrixRef<Scalar> matrix() const { return ConstMatrixRef<Scalar>(data_.data(), rows(), cols()); }

  /// The b-th matrix of a rank-3 tensor.
  MatrixRef<Scalar> slice(Index b) {
    return MatrixRef<Scalar>(data_.data() + b * shape_[1] * shape_[2], shape_[1], shape_[2]);
  }
  ConstMatrixRef<Scalar> slice(Index b) const {
    return ConstMatrixRef<Scalar>(data_.data() + b * shape_[1] * shape_[2], shape_[1], shape_[2]);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
  }

 private:
  void check_finite() const {
    if (!all_finite()) throw ContractError("tensor literal contains a non-finite value");
  }

  Shape shape_;
  std::vector<Scalar> data_;
};

using Tensor = BasicTensor<double>;

enum class Axis { rows, cols };

/// Identity on plain tensors; the tape overload returns the recorded value.
template <typename Scalar>
const BasicTensor<Scalar>& value_of(const BasicTensor<Scalar>& t) {
  return t;
}

namespace detail {

inline std::string shapes(const Shape& a, const Shape& b) { return a.str() + " and " + b.str(); }

inline void require_matrix(const Shape& s, const char* op) {
  if (s.rank() != 2) throw DimensionError(std::string(op) + " expects a matrix, got " + s.str());
}

inline void require_same(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) throw DimensionError(std::string(op) + ": shape mismatch " + shapes(a, b));
}

}  // namespace detail

template <typename Scalar>
BasicTensor<Scalar> matmul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_matrix(a.shape(), "matmul");
  detail::require_matrix(b.shape(), "matmul");
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner extents differ for " + detail::shapes(a.shape(), b.shape()));
  BasicTensor<Scalar> out(Shape{a.rows(), b.cols()});
  out.matrix().noalias() = a.matrix() * b.matrix();
  return out;
}

/// aᵀ·b without materializing the transpose.
template <typename Scalar>
BasicTensor<Scalar> matmul_tn(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_matrix(a.shape(), "matmul_tn");
  detail::require_matrix(b.shape(), "matmul_tn");
  if (a.rows() != b.rows()) throw DimensionError("matmul_tn: row extents differ for " + detail::shapes(a.shape(), b.shape()));
  BasicTensor<Scalar> out(Shape{a.cols(), b.cols()});
  out.matrix().noalias() = a.matrix().transpose() * b.matrix();
  return out;
}

/// a·bᵀ without materializing the transpose.
template <typename Scalar>
BasicTensor<Scalar> matmul_nt(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_matrix(a.shape(), "matmul_nt");
  detail::require_matrix(b.shape(), "matmul_nt");
  if (a.cols() != b.cols()) throw DimensionError("matmul_nt: column extents differ for " + detail::shapes(a.shape(), b.shape()));
  BasicTensor<Scalar> out(Shape{a.rows(), b.rows()});
  out.matrix().noalias() = a.matrix() * b.matrix().transpose();
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> transpose(const BasicTensor<Scalar>& a) {
  detail::require_matrix(a.shape(), "transpose");
  BasicTensor<Scalar> out(Shape{a.cols(), a.rows()});
  out.matrix() = a.matrix().transpose();
  return out;
}

/// Row-wise softmax in place over the last axis, max-subtracted.
template <typename Derived>
void softmax_rows_inplace(Eigen::MatrixBase<Derived>& m) {
  for (Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const auto mx = row.maxCoeff();
    row = (row.array() - mx).exp().matrix();
    row /= row.sum();
    // subnormal probabilities become 0; arithmetic on them is very slow
    using S = typename Derived::Scalar;
    row = (row.array() < std::numeric_limits<S>::min()).select(S(0), row.array()).matrix();
  }
}

/// Softmax over the last axis.
template <typename Scalar>
BasicTensor<Scalar> softmax(const BasicTensor<Scalar>& x) {
  BasicTensor<Scalar> out = x;
  auto m = out.matrix();
  softmax_rows_inplace(m);
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> softmax(BasicTensor<Scalar>&& x) {
  auto m = x.matrix();
  softmax_rows_inplace(m);
  return std::move(x);
}

template <typename Scalar>
BasicTensor<Scalar> relu(const BasicTensor<Scalar>& x) {
  BasicTensor<Scalar> out(x.shape());
  out.matrix() = x.matrix().cwiseMax(Scalar(0));
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> add(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same(a.shape(), b.shape(), "add");
  BasicTensor<Scalar> out(a.shape());
  out.matrix() = a.matrix() + b.matrix();
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> sub(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same(a.shape(), b.shape(), "sub");
  BasicTensor<Scalar> out(a.shape());
  out.matrix() = a.matrix() - b.matrix();
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> hadamard(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same(a.shape(), b.shape(), "hadamard");
  BasicTensor<Scalar> out(a.shape());
  out.matrix() = a.matrix().cwiseProduct(b.matrix());
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> scale(const BasicTensor<Scalar>& a, Scalar s) {
  BasicTensor<Scalar> out(a.shape());
  out.matrix() = a.matrix() * s;
  return out;
}

/// Adds a length-cols bias to every row.
template <typename Scalar>
BasicTensor<Scalar> add_row(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& bias) {
  if (bias.size() != x.cols()) throw DimensionError("add_row: bias " + detail::shapes(bias.shape(), x.shape()));
  BasicTensor<Scalar> out(x.shape());
  const Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> b(bias.data().data(), x.cols());
  out.matrix() = x.matrix().rowwise() + b;
  return out;
}

/// Sum of all elements as a one-element tensor.
template <typename Scalar>
BasicTensor<Scalar> sum(const BasicTensor<Scalar>& x) {
  return BasicTensor<Scalar>(Shape{1}, {x.matrix().sum()});
}

template <typename Scalar>
BasicTensor<Scalar> concat(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b, Axis axis) {
  detail::require_matrix(a.shape(), "concat");
  detail::require_matrix(b.shape(), "concat");
  if (axis == Axis::cols) {
    if (a.rows() != b.rows()) throw DimensionError("concat(cols): row extents differ for " + detail::shapes(a.shape(), b.shape()));
    BasicTensor<Scalar> out(Shape{a.rows(), a.cols() + b.cols()});
    out.matrix() << a.matrix(), b.matrix();
    return out;
  }
  if (a.cols() != b.cols()) throw DimensionError("concat(rows): column extents differ for " + detail::shapes(a.shape(), b.shape()));
  BasicTensor<Scalar> out(Shape{a.rows() + b.rows(), a.cols()});
  out.matrix() << a.matrix(), b.matrix();
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> block(const BasicTensor<Scalar>& x, Index row, Index rows, Index col, Index cols) {
  detail::require_matrix(x.shape(), "block");
  if (row < 0 || col < 0 || rows <= 0 || cols <= 0 || row + rows > x.rows() || col + cols > x.cols())
    throw DimensionError("block out of range of " + x.shape().str());
  BasicTensor<Scalar> out(Shape{rows, cols});
  out.matrix() = x.matrix().block(row, col, rows, cols);
  return out;
}

inline void check_grid(std::span<const Shape> shapes, Index grid_rows, Index grid_cols, Index& rows, Index& cols) {
  if (grid_rows <= 0 || grid_cols <= 0 || static_cast<Index>(shapes.size()) != grid_rows * grid_cols)
    throw DimensionError("assemble: block count does not match grid");
  rows = 0;
  cols = 0;
  for (Index i = 0; i < grid_rows; ++i) rows += shapes[static_cast<std::size_t>(i * grid_cols)][0];
  for (Index j = 0; j < grid_cols; ++j) cols += shapes[static_cast<std::size_t>(j)][1];
  for (Index i = 0; i < grid_rows; ++i)
    for (Index j = 0; j < grid_cols; ++j) {
      const Shape& s = shapes[static_cast<std::size_t>(i * grid_cols + j)];
      if (s.rank() != 2 || s[0] != shapes[static_cast<std::size_t>(i * grid_cols)][0] || s[1] != shapes[static_cast<std::size_t>(j)][1])
        throw DimensionError("assemble: block " + s.str() + " does not fit the grid");
    }
}

/// Tiles a row-major grid of blocks into one matrix.
template <typename Scalar>
BasicTensor<Scalar> assemble(std::span<const BasicTensor<Scalar>> blocks, Index grid_rows, Index grid_cols) {
  std::vector<Shape> shapes;
  for (const auto& b : blocks) shapes.push_back(b.shape());
  Index rows = 0, cols = 0;
  check_grid(shapes, grid_rows, grid_cols, rows, cols);
  BasicTensor<Scalar> out(Shape{rows, cols});
  Index r0 = 0;
  for (Index i = 0; i < grid_rows; ++i) {
    Index c0 = 0;
    const Index h = shapes[static_cast<std::size_t>(i * grid_cols)][0];
    for (Index j = 0; j < grid_cols; ++j) {
      const auto& b = blocks[static_cast<std::size_t>(i * grid_cols + j)];
      out.matrix().block(r0, c0, h, b.cols()) = b.matrix();
      c0 += b.cols();
    }
    r0 += h;
  }
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> tile_rows(const BasicTensor<Scalar>& x, Index times) {
  detail::require_matrix(x.shape(), "tile_rows");
  if (times <= 0) throw DimensionError("tile_rows: repeat count must be positive");
  BasicTensor<Scalar> out(Shape{x.rows() * times, x.cols()});
  for (Index t = 0; t < times; ++t) out.matrix().middleRows(t * x.rows(), x.rows()) = x.matrix();
  return out;
}

/// Row lookup: out[i] = table[indices[i]].
template <typename Scalar>
BasicTensor<Scalar> gather_rows(const BasicTensor<Scalar>& table, std::span<const Index> indices) {
  detail::require_matrix(table.shape(), "gather_rows");
  if (indices.empty()) throw DimensionError("gather_rows: no indices");
  BasicTensor<Scalar> out(Shape{static_cast<Index>(indices.size()), table.cols()});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= table.rows()) throw InputError("gather_rows: index out of range");
    out.matrix().row(static_cast<Index>(i)) = table.matrix().row(indices[i]);
  }
  return out;
}

/// Per-row normalization followed by a learned gain and bias.
template <typename Scalar>
BasicTensor<Scalar> layer_norm(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& gain, const BasicTensor<Scalar>& bias,
                               Scalar eps = Scalar(1e-5)) {
  if (gain.size() != x.cols() || bias.size() != x.cols()) throw DimensionError("layer_norm: gain/bias width mismatch");
  BasicTensor<Scalar> out(x.shape());
  auto in = x.matrix();
  auto o = out.matrix();
  const Index d = x.cols();
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar mean = in.row(r).sum() / Scalar(d);
    const Scalar var = (in.row(r).array() - mean).square().sum() / Scalar(d);
    const Scalar inv = Scalar(1) / std::sqrt(var + eps);
    for (Index c = 0; c < d; ++c) o(r, c) = (in(r, c) - mean) * inv * gain[c] + bias[c];
  }
  return out;
}

/// Mean token cross-entropy of row-wise logits against integer targets.
template <typename Scalar>
BasicTensor<Scalar> cross_entropy(const BasicTensor<Scalar>& logits, std::span<const Index> targets) {
  detail::require_matrix(logits.shape(), "cross_entropy");
  if (static_cast<Index>(targets.size()) != logits.rows()) throw DimensionError("cross_entropy: target count mismatch");
  Scalar total = 0;
  auto m = logits.matrix();
  for (Index r = 0; r < m.rows(); ++r) {
    const Index t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= m.cols()) throw InputError("cross_entropy: target out of range");
    const Scalar mx = m.row(r).maxCoeff();
    const Scalar lse = mx + std::log((m.row(r).array() - mx).exp().sum());
    total += lse - m(r, t);
  }
  return BasicTensor<Scalar>(Shape{1}, {total / Scalar(m.rows())});
}

}  // namespace amlp
