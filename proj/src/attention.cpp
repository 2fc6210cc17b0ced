#include "amlp/attention.hpp"

#include <algorithm>
#include <cmath>

#include "amlp/jacobi.hpp"
#include "amlp/multihead.hpp"

namespace amlp {

std::string to_string(Nonlinearity f) {
  switch (f) {
    case Nonlinearity::softmax:
      return "softmax";
    case Nonlinearity::relu:
      return "relu";
    case Nonlinearity::identity:
      return "identity";
  }
  return "?";
}

Nonlinearity parse_nonlinearity(std::string_view name) {
  if (name == "softmax") return Nonlinearity::softmax;
  if (name == "relu") return Nonlinearity::relu;
  if (name == "identity") return Nonlinearity::identity;
  throw ConfigError("unknown nonlinearity '" + std::string(name) + "' (softmax|relu|identity)");
}

void validate_projections(const Shape& cq, const Shape& ck, Index width) {
  if (cq.rank() != 2 || !(cq == ck))
    throw DimensionError("C_q and C_k must share a c×d shape, got " + cq.str() + " and " + ck.str());
  if (cq[1] != width) throw DimensionError("projection width " + cq.str() + " does not match d=" + std::to_string(width));
  if (cq[0] < 1 || cq[0] > width) throw ConfigError("inner dimension c must satisfy 1 <= c <= d");
}

Var ema(const Var& q, double beta) {
  Tensor out = ema(q.value(), beta);
  return q.tape()->record(std::move(out), {q}, [q, beta](Tape& tape, const Tensor& g) {
    // Reverse scan: carry accumulates the gradient reaching q̂ᵢ.
    const auto gm = g.matrix();
    auto dq = tape.grad_buffer(q).matrix();
    Eigen::RowVectorXd carry = Eigen::RowVectorXd::Zero(gm.cols());
    for (Index i = gm.rows(); i-- > 0;) {
      carry += gm.row(i);
      if (i == 0) {
        dq.row(0) += carry;
      } else {
        dq.row(i) += (1.0 - beta) * carry;
        carry *= beta;
      }
    }
  });
}

LowRankFactor low_rank_factor(const Tensor& sigma, Index c) {
  if (sigma.rank() != 2 || sigma.rows() != sigma.cols())
    throw DimensionError("distance matrix must be square, got " + sigma.shape().str());
  const Index d = sigma.rows();
  if (c < 1 || c > d) throw ContractError("rank c must satisfy 1 <= c <= d");
  const double magnitude = std::max(1.0, sigma.matrix().cwiseAbs().maxCoeff());
  if ((sigma.matrix() - sigma.matrix().transpose()).cwiseAbs().maxCoeff() > 1e-9 * magnitude)
    throw ContractError("distance matrix is not symmetric");

  SymmetricEigen eig = symmetric_eigen(sigma);
  const double negative_tol = 1e-9 * std::max(1.0, sigma.matrix().norm());
  LowRankFactor out;
  out.factor = Tensor(Shape{d, c});
  for (Index k = 0; k < d; ++k) {
    double lambda = eig.values[static_cast<std::size_t>(k)];
    if (lambda < -negative_tol) throw NotPsdError("distance matrix has eigenvalue " + std::to_string(lambda));
    lambda = std::max(lambda, 0.0);
    out.eigenvalues.push_back(lambda);
    if (k < c)
      out.factor.matrix().col(k) = eig.vectors.matrix().col(k) * std::sqrt(lambda);
    else
      out.dropped_mass += lambda * lambda;
  }
  return out;
}


std::string to_string(Mechanism m) {
  switch (m) {
    case Mechanism::softmax:
      return "softmax";
    case Mechanism::cov:
      return "cov";
    case Mechanism::pquery:
      return "pquery";
  }
  return "?";
}

Mechanism parse_mechanism(std::string_view name) {
  if (name == "softmax") return Mechanism::softmax;
  if (name == "cov") return Mechanism::cov;
  if (name == "pquery") return Mechanism::pquery;
  throw ConfigError("unknown attention mechanism '" + std::string(name) + "' (softmax|cov|pquery)");
}

}  // namespace amlp
