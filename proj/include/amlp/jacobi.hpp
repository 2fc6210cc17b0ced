#pragma once

#include <vector>

#include "amlp/tensor.hpp"

namespace amlp {

struct SymmetricEigen {
  /// Descending; equal values keep their diagonal order.
  std::vector<double> values;
  /// Column i is the unit eigenvector of values[i].
  Tensor vectors;
  int sweeps = 0;
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Stops once every
/// off-diagonal entry is below 1e-12·‖A‖_F, or after 100 sweeps.
SymmetricEigen symmetric_eigen(const Tensor& a);

}  // namespace amlp
