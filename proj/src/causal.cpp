#include "amlp/causal.hpp"

namespace amlp {

CausalCovState causal_amlp_cov_init(Index width) {
  if (width < 1) throw DimensionError("causal state width must be positive");
  return {Tensor(Shape{width, width}), Tensor(Shape{width, width}), Tensor(Shape{width, width}), 0};
}

CausalStepResult causal_amlp_cov_step(const CausalCovState& state, const Tensor& q, const Tensor& k, const Tensor& v,
                                      const AmlpCovParams<Tensor>& params) {
  const Index d = state.width();
  for (const Tensor* t : {&q, &k, &v})
    if (t->rank() != 2 || t->rows() != 1 || t->cols() != d)
      throw DimensionError("causal step expects 1x" + std::to_string(d) + " tokens, got " + t->shape().str());
  validate_projections(params.query_proj.shape(), params.key_proj.shape(), d);

  CausalStepResult r{Tensor(Shape{1, d}), state};
  CausalCovState& s = r.state;
  auto qr = q.matrix().row(0);
  auto kr = k.matrix().row(0);
  auto vr = v.matrix().row(0);
  s.sq.matrix().noalias() += qr.transpose() * qr;
  s.sk.matrix().noalias() += kr.transpose() * kr;
  s.z.matrix().noalias() += kr.transpose() * vr;
  s.step = state.step + 1;

  // κₜ = Lₜᵀ (c×d)
  Tensor kappa = add(matmul(params.query_proj, softmax(s.sq)), matmul(params.key_proj, softmax(s.sk)));
  Tensor qkv = matmul(kappa, softmax(s.z));
  Tensor hidden = activate(matmul_nt(q, kappa), params.sigma1);
  r.output = matmul(hidden, qkv);
  return r;
}

Tensor causal_amlp_cov_sequence(const AttentionInputs<Tensor>& in, const AmlpCovParams<Tensor>& params) {
  validate(in);
  if (in.target_length() != in.source_length()) throw DimensionError("causal recurrence needs n == m");
  const Index n = in.target_length();
  const Index d = in.width();
  Tensor out(Shape{n, d});
  CausalCovState state = causal_amlp_cov_init(d);
  for (Index t = 0; t < n; ++t) {
    auto step = causal_amlp_cov_step(state, block(in.query, t, 1, 0, d), block(in.key, t, 1, 0, d),
                                     block(in.value, t, 1, 0, d), params);
    out.matrix().row(t) = step.output.matrix().row(0);
    state = std::move(step.state);
  }
  return out;
}

}  // namespace amlp
