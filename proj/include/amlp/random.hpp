#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "amlp/tensor.hpp"

namespace amlp {

using Rng = std::mt19937_64;

/// N(0, 1) entries times `scale`.
inline Tensor randn(Shape shape, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor t(shape);
  for (double& v : t.data()) v = scale * dist(rng);
  return t;
}

/// Parameter-matrix initialization: N(0, 1) / sqrt(fan_in), fan_in = last extent.
inline Tensor init_weight(Index rows, Index cols, Rng& rng, Index fan_in = 0) {
  const double d = static_cast<double>(fan_in > 0 ? fan_in : cols);
  return randn(Shape{rows, cols}, rng, 1.0 / std::sqrt(d));
}

/// Symmetric PSD matrix B·Bᵀ of rank r (almost surely), B ~ N(0, 1).
inline Tensor random_psd(Index d, Index r, Rng& rng) {
  Tensor b = randn(Shape{d, r}, rng);
  return matmul_nt(b, b);
}

}  // namespace amlp
