#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "amlp/attention.hpp"

namespace amlp {

enum class Mechanism { softmax, cov, pquery };

std::string to_string(Mechanism m);
Mechanism parse_mechanism(std::string_view name);

/// Input/output projections (d_model×d_model) plus per-head mechanism
/// parameters. Only the vector matching `mechanism` is consulted.
template <class T>
struct MultiHeadParams {
  Index heads = 1;
  Mechanism mechanism = Mechanism::softmax;
  T wq, wk, wv, wo;
  std::vector<AmlpCovParams<T>> cov;
  std::vector<AmlpPQueryParams<T>> pquery;
  bool scaled = true;  ///< 1/√d for the softmax mechanism

  Index model_width() const { return value_of(wq).rows(); }
  Index head_width() const { return model_width() / heads; }
};

template <class T>
void validate(const MultiHeadParams<T>& p) {
  const Index dm = p.model_width();
  if (p.heads < 1 || dm % p.heads != 0)
    throw ConfigError("head count " + std::to_string(p.heads) + " does not divide d_model " + std::to_string(dm));
  for (const T* w : {&p.wq, &p.wk, &p.wv, &p.wo}) {
    const Shape& s = value_of(*w).shape();
    if (s.rank() != 2 || s[0] != dm || s[1] != dm) throw DimensionError("projection must be d_model×d_model, got " + s.str());
  }
  const auto need = static_cast<std::size_t>(p.heads);
  if (p.mechanism == Mechanism::cov && p.cov.size() != need) throw ConfigError("one AMLP-Cov parameter set per head required");
  if (p.mechanism == Mechanism::pquery && p.pquery.size() != need)
    throw ConfigError("one AMLP-PQuery parameter set per head required");
}

/// Runs the mechanism on one head's Q, K, V slices.
template <class T>
T head_forward(const MultiHeadParams<T>& p, Index head, const AttentionInputs<T>& in) {
  switch (p.mechanism) {
    case Mechanism::softmax:
      return softmax_attention(in, p.scaled);
    case Mechanism::cov:
      return amlp_cov_forward(in, p.cov[static_cast<std::size_t>(head)]);
    case Mechanism::pquery:
      break;
  }
  return amlp_pquery_forward(in, p.pquery[static_cast<std::size_t>(head)]);
}

/// Projects, splits the feature axis into `heads` contiguous slices, runs
/// the mechanism per head, concatenates, and applies W_o.
template <class T>
T multi_head_forward(const T& target, const T& source, const MultiHeadParams<T>& p) {
  validate(p);
  const Index dm = p.model_width();
  if (value_of(target).cols() != dm || value_of(source).cols() != dm)
    throw DimensionError("inputs must have d_model=" + std::to_string(dm) + " columns");
  const T q = matmul(target, p.wq);
  const T k = matmul(source, p.wk);
  const T v = matmul(source, p.wv);
  const Index n = value_of(q).rows();
  const Index m = value_of(k).rows();
  const Index dh = p.head_width();
  std::vector<T> outs;
  outs.reserve(static_cast<std::size_t>(p.heads));
  for (Index h = 0; h < p.heads; ++h) {
    AttentionInputs<T> in{block(q, 0, n, h * dh, dh), block(k, 0, m, h * dh, dh), block(v, 0, m, h * dh, dh)};
    outs.push_back(head_forward(p, h, in));
  }
  const T merged = p.heads == 1 ? outs.front() : assemble(std::span<const T>(outs), 1, p.heads);
  return matmul(merged, p.wo);
}

}  // namespace amlp
