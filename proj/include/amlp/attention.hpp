#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include "amlp/tape.hpp"
#include "amlp/tensor.hpp"

namespace amlp {

/// Choice of the outer nonlinearity σ₁ applied to Q·W_qk. Softmax
/// normalizes over the inner (c) axis.
enum class Nonlinearity { softmax, relu, identity };

std::string to_string(Nonlinearity f);
Nonlinearity parse_nonlinearity(std::string_view name);

template <class T>
T activate(const T& x, Nonlinearity f) {
  switch (f) {
    case Nonlinearity::softmax:
      return softmax(x);
    case Nonlinearity::relu:
      return relu(x);
    case Nonlinearity::identity:
      break;
  }
  return x;
}

/// Target queries Q (n×d) and source keys/values K, V (m×d).
template <class T>
struct AttentionInputs {
  T query;
  T key;
  T value;

  Index target_length() const { return value_of(query).rows(); }
  Index source_length() const { return value_of(key).rows(); }
  Index width() const { return value_of(query).cols(); }
};

template <class T>
void validate(const AttentionInputs<T>& in) {
  const Shape& q = value_of(in.query).shape();
  const Shape& k = value_of(in.key).shape();
  const Shape& v = value_of(in.value).shape();
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
    throw DimensionError("attention inputs must be matrices, got Q" + q.str() + " K" + k.str() + " V" + v.str());
  if (q[1] != k[1]) throw DimensionError("Q and K widths differ: " + q.str() + " and " + k.str());
  if (k[0] != v[0]) throw DimensionError("K and V lengths differ: " + k.str() + " and " + v.str());
}

/// Position-wise MLP relu(X·W1)·W2. Rows never interact.
template <class T>
T mlp_forward(const T& x, const T& w1, const T& w2) {
  const Shape& xs = value_of(x).shape();
  const Shape& s1 = value_of(w1).shape();
  const Shape& s2 = value_of(w2).shape();
  if (s1.rank() != 2 || s2.rank() != 2 || xs.cols() != s1[0] || s1[1] != s2[0] || s2[1] != xs.cols())
    throw DimensionError("mlp_forward: shapes " + xs.str() + ", " + s1.str() + ", " + s2.str() + " do not chain");
  return matmul(relu(matmul(x, w1)), w2);
}

/// softmax(Q·Kᵀ [/√d])·V with the softmax over keys.
template <class T>
T softmax_attention(const AttentionInputs<T>& in, bool scaled = true) {
  validate(in);
  T logits = matmul_nt(in.query, in.key);
  if (scaled) logits = scale(logits, 1.0 / std::sqrt(static_cast<double>(in.width())));
  return matmul(softmax(logits), in.value);
}

/// Q·Σ·Kᵀ·V evaluated right to left, so no n×m matrix is formed.
template <class T>
T distance_attention(const AttentionInputs<T>& in, const T& sigma) {
  validate(in);
  const Shape& s = value_of(sigma).shape();
  if (s.rank() != 2 || s[0] != in.width() || s[1] != in.width())
    throw DimensionError("distance matrix " + s.str() + " does not match width " + std::to_string(in.width()));
  if (value_of(in.value).cols() != in.width()) throw DimensionError("distance_attention expects V of width d");
  return matmul(in.query, matmul(sigma, matmul_tn(in.key, in.value)));
}

/// Q·L·Lᵀ·Kᵀ·V, the factored form of distance_attention with Σ ≈ L·Lᵀ.
template <class T>
T factored_attention(const AttentionInputs<T>& in, const T& factor) {
  validate(in);
  const Shape& s = value_of(factor).shape();
  if (s.rank() != 2 || s[0] != in.width()) throw DimensionError("factor " + s.str() + " does not match width");
  return matmul(matmul(in.query, factor), matmul_tn(factor, matmul_tn(in.key, in.value)));
}

/// Rank-c factor L (d×c) of a symmetric PSD Σ ≈ L·Lᵀ.
struct LowRankFactor {
  Tensor factor;
  /// Sum of squares of the discarded eigenvalues, i.e. ‖Σ − L·Lᵀ‖_F².
  double dropped_mass = 0.0;
  /// All eigenvalues in descending order (after clamping tiny negatives).
  std::vector<double> eigenvalues;
};

/// Keeps the c largest eigenpairs: L = U_c·Λ_c^{1/2}. Uses the in-repo
/// cyclic Jacobi solver. Throws ContractError if Σ is not symmetric and
/// NotPsdError if it has an eigenvalue below the PSD tolerance.
LowRankFactor low_rank_factor(const Tensor& sigma, Index c);

/// Adaptive weights of the AMLP form σ₁(Q·W_qk)·W_qkv.
template <class T>
struct AdaptiveWeights {
  T qk;   ///< d×c
  T qkv;  ///< c×d
};

/// σ₁(Q·W_qk)·W_qkv
template <class T>
T amlp_forward(const T& query, const AdaptiveWeights<T>& w, Nonlinearity sigma1) {
  return matmul(activate(matmul(query, w.qk), sigma1), w.qkv);
}

/// Covariance parameterization: learned down-projections C_q, C_k (c×d).
template <class T>
struct AmlpCovParams {
  T query_proj;
  T key_proj;
  Nonlinearity sigma1 = Nonlinearity::softmax;

  Index inner() const { return value_of(query_proj).rows(); }
};

/// Throws unless C_q, C_k are both c×d with 1 ≤ c ≤ d.
void validate_projections(const Shape& cq, const Shape& ck, Index width);

/// κ = C_q·softmax(QᵀQ) + C_k·softmax(KᵀK) is Lᵀ (c×d), so W_qk = κᵀ and
/// W_qkv = κ·softmax(KᵀV). Covariance softmaxes normalize each row.
template <class T>
AdaptiveWeights<T> amlp_cov_weights(const AttentionInputs<T>& in, const AmlpCovParams<T>& p) {
  validate(in);
  validate_projections(value_of(p.query_proj).shape(), value_of(p.key_proj).shape(), in.width());
  if (value_of(in.value).cols() != in.width()) throw DimensionError("AMLP expects V of width d");
  T kappa = add(matmul(p.query_proj, softmax(matmul_tn(in.query, in.query))),
                matmul(p.key_proj, softmax(matmul_tn(in.key, in.key))));
  T qkv = matmul(kappa, softmax(matmul_tn(in.key, in.value)));
  return {transpose(kappa), qkv};
}

template <class T>
T amlp_cov_forward(const AttentionInputs<T>& in, const AmlpCovParams<T>& p) {
  return amlp_forward(in.query, amlp_cov_weights(in, p), p.sigma1);
}

/// Exponential moving average down the rows: q̂₁ = q₁,
/// q̂ᵢ = β·q̂ᵢ₋₁ + (1 − β)·qᵢ.
template <typename Scalar>
BasicTensor<Scalar> ema(const BasicTensor<Scalar>& q, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ContractError("ema: beta must lie in [0, 1]");
  detail::require_matrix(q.shape(), "ema");
  BasicTensor<Scalar> out = q;
  auto m = out.matrix();
  for (Index i = 1; i < m.rows(); ++i) m.row(i) = beta * m.row(i - 1) + (1.0 - beta) * q.matrix().row(i);
  return out;
}

Var ema(const Var& q, double beta);

/// Pseudo-query parameterization: C_q, C_k (c×d), mixing weight W (2d×d).
template <class T>
struct AmlpPQueryParams {
  T query_proj;
  T key_proj;
  T mix;
  double beta = 0.5;
  Nonlinearity sigma1 = Nonlinearity::softmax;

  Index inner() const { return value_of(query_proj).rows(); }
};

/// Lᵀ = [softmax(C_q·Q̂ᵀ)·Q̂, softmax(C_k·Kᵀ)·K]·W with Q̂ = ema(Q, β) and
/// both softmaxes over token positions; W_qk = L, W_qkv = softmax(Lᵀ·Kᵀ)·V.
template <class T>
AdaptiveWeights<T> amlp_pquery_weights(const AttentionInputs<T>& in, const AmlpPQueryParams<T>& p) {
  validate(in);
  validate_projections(value_of(p.query_proj).shape(), value_of(p.key_proj).shape(), in.width());
  const Shape& ws = value_of(p.mix).shape();
  if (ws.rank() != 2 || ws[0] != 2 * in.width() || ws[1] != in.width())
    throw DimensionError("mixing weight must be 2d×d, got " + ws.str());
  if (!(p.beta >= 0.0 && p.beta <= 1.0)) throw ContractError("beta must lie in [0, 1]");
  T q_hat = ema(in.query, p.beta);
  T from_query = matmul(softmax(matmul_nt(p.query_proj, q_hat)), q_hat);
  T from_key = matmul(softmax(matmul_nt(p.key_proj, in.key)), in.key);
  T lt = matmul(concat(from_query, from_key, Axis::cols), p.mix);
  T qkv = matmul(softmax(matmul_nt(lt, in.key)), in.value);
  return {transpose(lt), qkv};
}

template <class T>
T amlp_pquery_forward(const AttentionInputs<T>& in, const AmlpPQueryParams<T>& p) {
  return amlp_forward(in.query, amlp_pquery_weights(in, p), p.sigma1);
}

}  // namespace amlp
