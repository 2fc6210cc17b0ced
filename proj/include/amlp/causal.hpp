#pragma once

#include <utility>

#include "amlp/attention.hpp"

namespace amlp {

/// Running second moments for step-wise causal AMLP-Cov: after t tokens,
/// S_Q = Q₁..ₜᵀQ₁..ₜ, S_K = K₁..ₜᵀK₁..ₜ and z = K₁..ₜᵀV₁..ₜ.
struct CausalCovState {
  Tensor sq;
  Tensor sk;
  Tensor z;
  Index step = 0;

  Index width() const { return sq.rows(); }
};

CausalCovState causal_amlp_cov_init(Index width);

struct CausalStepResult {
  Tensor output;  ///< 1×d
  CausalCovState state;
};

/// Folds one (q, k, v) token into the state and emits its output
/// σ₁(q·Lₜ)·(Lₜᵀ·softmax(zₜ)). Cost per step is independent of t.
CausalStepResult causal_amlp_cov_step(const CausalCovState& state, const Tensor& q, const Tensor& k, const Tensor& v,
                                      const AmlpCovParams<Tensor>& params);

/// Runs the recurrence over all rows; row t of the result is the t-th step output.
Tensor causal_amlp_cov_sequence(const AttentionInputs<Tensor>& in, const AmlpCovParams<Tensor>& params);

}  // namespace amlp
