#include "amlp/verify.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <json.hpp>
#include <numeric>

#include "amlp/bench.hpp"
#include "amlp/causal.hpp"
#include "amlp/gradcheck.hpp"
#include "amlp/narmodel.hpp"

namespace amlp {

namespace {

struct ScaleGuard {
  explicit ScaleGuard(bool broken) : saved(testing_hooks::softmax_backward_scale()) {
    if (broken) testing_hooks::set_softmax_backward_scale(1.01);
  }
  ~ScaleGuard() { testing_hooks::set_softmax_backward_scale(saved); }
  double saved;
};

double max_abs(const Eigen::Ref<const Eigen::MatrixXd>& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

PropertyResult finish(std::string name, double err, double tol, long n, bool pass_when_below = true) {
  PropertyResult r;
  r.name = std::move(name);
  r.max_error = err;
  r.tolerance = tol;
  r.instances = n;
  r.passed = std::isfinite(err) && (pass_when_below ? err <= tol : err > tol);
  return r;
}

AttentionInputs<Tensor> inputs(Index n, Index m, Index d, Rng& rng) {
  return {randn(Shape{n, d}, rng), randn(Shape{m, d}, rng), randn(Shape{m, d}, rng)};
}

PropertyResult causal_prefix(Rng& rng) {
  const Nonlinearity fs[] = {Nonlinearity::softmax, Nonlinearity::relu, Nonlinearity::identity};
  std::uniform_int_distribution<Index> pn(1, 32), pd(1, 8);
  double worst = 0;
  const long count = 200;
  for (long i = 0; i < count; ++i) {
    const Index n = pn(rng), d = pd(rng);
    const Index c = std::uniform_int_distribution<Index>(1, std::min<Index>(4, d))(rng);
    auto in = inputs(n, n, d, rng);
    AmlpCovParams<Tensor> p{init_weight(c, d, rng), init_weight(c, d, rng), fs[i % 3]};
    const Tensor causal = causal_amlp_cov_sequence(in, p);
    for (Index t = 1; t <= n; ++t) {
      AttentionInputs<Tensor> pre{block(in.query, 0, t, 0, d), block(in.key, 0, t, 0, d), block(in.value, 0, t, 0, d)};
      const Tensor full = amlp_cov_forward(pre, p);
      worst = std::max(worst, max_abs(full.matrix().row(t - 1) - causal.matrix().row(t - 1)));
    }
  }
  return finish("causal_prefix_equivalence", worst, 1e-10, count);
}

PropertyResult low_rank(Rng& rng) {
  double worst = 0;
  const long count = 100;
  for (long i = 0; i < count; ++i) {
    const Index d = std::uniform_int_distribution<Index>(2, 32)(rng);
    const Index c = std::uniform_int_distribution<Index>(1, d)(rng);
    const Index r = std::uniform_int_distribution<Index>(1, d)(rng);
    const Tensor sigma = random_psd(d, r, rng);
    const LowRankFactor f = low_rank_factor(sigma, c);
    const double residual = (sigma.matrix() - f.factor.matrix() * f.factor.matrix().transpose()).squaredNorm();
    if (r <= c) {
      worst = std::max(worst, std::sqrt(residual));
    } else {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ref(Eigen::MatrixXd(sigma.matrix()), Eigen::EigenvaluesOnly);
      double dropped = 0;
      for (Index k = 0; k < d - c; ++k) dropped += ref.eigenvalues()[k] * ref.eigenvalues()[k];
      worst = std::max(worst, std::abs(residual - dropped));
    }
  }
  return finish("low_rank_factorization", worst, 1e-8, count);
}

PropertyResult distance_consistency(Rng& rng) {
  double worst = 0;
  const long count = 100;
  for (long i = 0; i < count; ++i) {
    const Index d = std::uniform_int_distribution<Index>(1, 16)(rng);
    const Index c = std::uniform_int_distribution<Index>(1, d)(rng);
    const Index r = std::uniform_int_distribution<Index>(1, c)(rng);
    const Index n = std::uniform_int_distribution<Index>(1, 16)(rng), m = std::uniform_int_distribution<Index>(1, 16)(rng);
    auto in = inputs(n, m, d, rng);
    const Tensor sigma = random_psd(d, r, rng);
    const Tensor a = distance_attention(in, sigma);
    const Tensor b = factored_attention(in, low_rank_factor(sigma, c).factor);
    worst = std::max(worst, max_abs(a.matrix() - b.matrix()));
  }
  return finish("distance_factored_consistency", worst, 1e-8, count);
}

template <class F>
PropertyResult gradient(const std::string& name, F build, const std::vector<std::vector<Tensor>>& cases) {
  double worst = 0;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    Rng rng(1000 + i);
    Tensor probe;
    auto loss = [&](Tape& t, std::span<const Var> v) -> Var {
      Var out = build(t, v);
      if (probe.size() != out.value().size()) probe = randn(out.value().shape(), rng);
      return sum(hadamard(out, t.constant(probe)));
    };
    worst = std::max(worst, finite_difference_check(loss, cases[i], {1e-4, 1e-4}).max_rel_error());
  }
  return finish("gradient_" + name, worst, 1e-4, static_cast<long>(cases.size()));
}

std::vector<PropertyResult> gradients(Rng& rng) {
  std::vector<std::vector<Tensor>> attn, mlp, cov, pq, ema_cases;
  for (int i = 0; i < 4; ++i) {
    const Index n = 2 + 2 * i, m = 8 - i, d = 2 + 2 * i, c = 1 + i;
    auto in = inputs(n, m, d, rng);
    attn.push_back({in.query, in.key, in.value});
    mlp.push_back({in.query, init_weight(d, 2 * d, rng, d), init_weight(2 * d, d, rng)});
    cov.push_back({in.query, in.key, in.value, init_weight(c, d, rng), init_weight(c, d, rng)});
    pq.push_back({in.query, in.key, in.value, init_weight(c, d, rng), init_weight(c, d, rng), init_weight(2 * d, d, rng)});
    ema_cases.push_back({in.query});
  }
  std::vector<PropertyResult> out;
  out.push_back(gradient(
      "softmax_attention",
      [](Tape&, std::span<const Var> v) { return softmax_attention(AttentionInputs<Var>{v[0], v[1], v[2]}); }, attn));
  out.push_back(gradient("mlp", [](Tape&, std::span<const Var> v) { return mlp_forward(v[0], v[1], v[2]); }, mlp));
  out.push_back(gradient(
      "amlp_cov",
      [](Tape&, std::span<const Var> v) {
        return amlp_cov_forward(AttentionInputs<Var>{v[0], v[1], v[2]}, AmlpCovParams<Var>{v[3], v[4], Nonlinearity::softmax});
      },
      cov));
  out.push_back(gradient(
      "amlp_pquery",
      [](Tape&, std::span<const Var> v) {
        return amlp_pquery_forward(AttentionInputs<Var>{v[0], v[1], v[2]},
                                   AmlpPQueryParams<Var>{v[3], v[4], v[5], 0.5, Nonlinearity::softmax});
      },
      pq));
  out.push_back(gradient("ema", [](Tape&, std::span<const Var> v) { return ema(v[0], 0.5); }, ema_cases));

  // The whole toy model: embeddings, projections, norms, C_q, C_k, W.
  double worst = 0;
  long count = 0;
  for (Mechanism mech : {Mechanism::cov, Mechanism::pquery}) {
    NarConfig c;
    c.vocab = 5;
    c.seq_len = c.source_len = 4;
    c.d_model = 8;
    c.heads = 2;
    c.inner = 2;
    c.mlp_hidden = 6;
    c.variant = mech;
    NarModel model = init_model(c);
    const auto batch = SyntheticTask{TaskKind::reverse, 5, 4, 3}.draw(1);
    auto f = [&](Tape&, std::span<const Var> p) { return batch_loss(c, p, batch); };
    worst = std::max(worst, finite_difference_check(f, model.params, {1e-4, 1e-4}).max_rel_error());
    ++count;
  }
  out.push_back(finish("gradient_nar_model", worst, 1e-4, count));
  return out;
}

PropertyResult permutation_invariance(Rng& rng) {
  double worst = 0;
  const long count = 20;
  for (long i = 0; i < count; ++i) {
    const Index n = 5, m = 7, d = 6;
    auto in = inputs(n, m, d, rng);
    AmlpCovParams<Tensor> p{init_weight(3, d, rng), init_weight(3, d, rng), Nonlinearity::softmax};
    std::vector<Index> perm(static_cast<std::size_t>(m));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    AttentionInputs<Tensor> shuffled{in.query, Tensor(in.key.shape()), Tensor(in.value.shape())};
    for (Index j = 0; j < m; ++j) {
      shuffled.key.matrix().row(j) = in.key.matrix().row(perm[j]);
      shuffled.value.matrix().row(j) = in.value.matrix().row(perm[j]);
    }
    worst = std::max(worst, max_abs(amlp_cov_forward(in, p).matrix() - amlp_cov_forward(shuffled, p).matrix()));
  }
  return finish("cov_source_permutation_invariance", worst, 1e-12, count);
}

PropertyResult pquery_order(Rng& rng) {
  // Smallest change seen when permuting target rows; must stay away from 0.
  double least = INFINITY;
  const long count = 20;
  for (long i = 0; i < count; ++i) {
    const Index n = 6, m = 5, d = 4;
    auto in = inputs(n, m, d, rng);
    AmlpPQueryParams<Tensor> p{init_weight(2, d, rng), init_weight(2, d, rng), init_weight(2 * d, d, rng), 0.5,
                               Nonlinearity::softmax};
    Tensor shuffled(in.query.shape());
    for (Index r = 0; r < n; ++r) shuffled.matrix().row(r) = in.query.matrix().row(n - 1 - r);
    const Tensor base = amlp_pquery_forward(in, p);
    const Tensor moved = amlp_pquery_forward(AttentionInputs<Tensor>{shuffled, in.key, in.value}, p);
    Tensor back(base.shape());
    for (Index r = 0; r < n; ++r) back.matrix().row(r) = moved.matrix().row(n - 1 - r);
    least = std::min(least, max_abs(back.matrix() - base.matrix()));
  }
  return finish("pquery_order_sensitivity", least, 1e-6, count, false);
}

PropertyResult iqr_rule() {
  std::vector<double> s(100);
  std::iota(s.begin(), s.end(), 1.0);
  const IqrResult r = iqr_filter(s);
  const double err = std::abs(r.mean - 50.5) + std::abs(double(r.kept.size()) - 50) + std::abs(r.kept.front() - 26) +
                     std::abs(r.kept.back() - 75);
  return finish("iqr_rule", err, 0.0, 1);
}

PropertyResult memory_ratio() {
  const double ratio = double(model_memory(Arch::nar_amlp, 8192, 8192, 512, 64, 8, 1)) /
                       double(model_memory(Arch::nar_softmax, 8192, 8192, 512, 64, 8, 1));
  return finish("memory_model_ratio", ratio, 0.12, 1);
}

PropertyResult determinism(std::uint64_t seed) {
  auto run = [seed] {
    Rng rng(seed);
    auto in = inputs(6, 7, 5, rng);
    AmlpCovParams<Tensor> cp{init_weight(3, 5, rng), init_weight(3, 5, rng), Nonlinearity::softmax};
    AmlpPQueryParams<Tensor> pp{init_weight(3, 5, rng), init_weight(3, 5, rng), init_weight(10, 5, rng), 0.5,
                                Nonlinearity::softmax};
    std::vector<Tensor> outs{amlp_cov_forward(in, cp), amlp_pquery_forward(in, pp), softmax_attention(in),
                             causal_amlp_cov_sequence(AttentionInputs<Tensor>{in.query, block(in.key, 0, 6, 0, 5),
                                                                              block(in.value, 0, 6, 0, 5)},
                                                      cp)};
    return outs;
  };
  const auto a = run(), b = run();
  long differing = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    differing += std::memcmp(a[i].data().data(), b[i].data().data(), sizeof(double) * a[i].size()) != 0;
  return finish("forward_determinism", double(differing), 0.0, static_cast<long>(a.size()));
}

}  // namespace

std::vector<PropertyResult> run_verify_suite(const VerifyOptions& options) {
  ScaleGuard guard(options.break_gradients);
  Rng rng(options.seed);
  std::vector<PropertyResult> out;
  out.push_back(causal_prefix(rng));
  out.push_back(low_rank(rng));
  out.push_back(distance_consistency(rng));
  for (PropertyResult& r : gradients(rng)) out.push_back(std::move(r));
  out.push_back(permutation_invariance(rng));
  out.push_back(pquery_order(rng));
  out.push_back(iqr_rule());
  out.push_back(memory_ratio());
  out.push_back(determinism(options.seed));
  return out;
}

std::string to_json_line(const PropertyResult& r) {
  nlohmann::json j;
  j["property"] = r.name;
  j["passed"] = r.passed;
  j["max_error"] = r.max_error;
  j["tolerance"] = r.tolerance;
  j["instances"] = r.instances;
  return j.dump();
}

std::string to_text_line(const PropertyResult& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s %s (max_error=%.3e tolerance=%.1e instances=%ld)", r.passed ? "PASS" : "FAIL",
                r.name.c_str(), r.max_error, r.tolerance, r.instances);
  return buf;
}

}  // namespace amlp
