#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cstring>
#include <numeric>

#include "amlp/attention.hpp"
#include "amlp/causal.hpp"
#include "amlp/gradcheck.hpp"
#include "amlp/jacobi.hpp"
#include "amlp/multihead.hpp"
#include "amlp/random.hpp"
#include "oracles.hpp"

using namespace amlp;

namespace {

AttentionInputs<Tensor> random_inputs(Index n, Index m, Index d, Rng& rng) {
  return {randn(Shape{n, d}, rng), randn(Shape{m, d}, rng), randn(Shape{m, d}, rng)};
}

AmlpCovParams<Tensor> random_cov(Index c, Index d, Rng& rng, Nonlinearity f = Nonlinearity::softmax) {
  return {init_weight(c, d, rng), init_weight(c, d, rng), f};
}

AmlpPQueryParams<Tensor> random_pquery(Index c, Index d, Rng& rng, double beta = 0.5) {
  return {init_weight(c, d, rng), init_weight(c, d, rng), init_weight(2 * d, d, rng), beta, Nonlinearity::softmax};
}

Tensor permute_rows(const Tensor& x, const std::vector<Index>& perm) {
  Tensor y(x.shape());
  for (Index i = 0; i < x.rows(); ++i) y.matrix().row(i) = x.matrix().row(perm[static_cast<std::size_t>(i)]);
  return y;
}

double frob(const Tensor& x) { return x.matrix().norm(); }

}  // namespace

TEST_CASE("mlp_forward") {
  Rng rng(1);
  Tensor x = randn(Shape{3, 4}, rng);
  SUBCASE("identity weights on nonnegative input") {
    Tensor xp = relu(x);
    Tensor out = mlp_forward(xp, Tensor::identity(4), Tensor::identity(4));
    CHECK(oracle::max_abs_diff(out, xp) == 0.0);
  }
  Tensor w1 = init_weight(4, 8, rng), w2 = init_weight(8, 4, rng);
  SUBCASE("rows are processed independently") {
    std::vector<Index> perm{2, 0, 1};
    CHECK(oracle::max_abs_diff(mlp_forward(permute_rows(x, perm), w1, w2), permute_rows(mlp_forward(x, w1, w2), perm)) ==
          0.0);
  }
  SUBCASE("scalar oracle") {
    Tensor expected = oracle::matmul(oracle::relu(oracle::matmul(x, w1)), w2);
    CHECK(oracle::max_abs_diff(mlp_forward(x, w1, w2), expected) < 1e-14);
  }
  CHECK_THROWS_AS(mlp_forward(x, w1, init_weight(4, 4, rng)), DimensionError);
}

TEST_CASE("softmax_attention") {
  Rng rng(2);
  SUBCASE("single key returns its value") {
    auto in = random_inputs(1, 1, 3, rng);
    CHECK(oracle::max_abs_diff(softmax_attention(in), in.value) < 1e-15);
  }
  SUBCASE("identical keys average the values") {
    auto in = random_inputs(3, 4, 2, rng);
    for (Index j = 1; j < 4; ++j) in.key.matrix().row(j) = in.key.matrix().row(0);
    Tensor out = softmax_attention(in);
    for (Index i = 0; i < 3; ++i)
      for (Index c = 0; c < 2; ++c) CHECK(std::abs(out(i, c) - in.value.matrix().col(c).mean()) < 1e-14);
  }
  SUBCASE("two-key example, unscaled") {
    AttentionInputs<Tensor> in{Tensor::from_rows({{1, 0}}), Tensor::identity(2), Tensor::identity(2)};
    Tensor out = softmax_attention(in, false);
    const double e = std::exp(1.0);
    CHECK(std::abs(out(0, 0) - e / (e + 1)) < 1e-15);
    CHECK(std::abs(out(0, 1) - 1 / (e + 1)) < 1e-15);
  }
  SUBCASE("scaled matches oracle") {
    auto in = random_inputs(4, 6, 8, rng);
    Tensor logits = oracle::matmul(in.query, oracle::transpose(in.key));
    for (double& v : logits.data()) v /= std::sqrt(8.0);
    CHECK(oracle::max_abs_diff(softmax_attention(in), oracle::matmul(oracle::softmax_rows(logits), in.value)) < 1e-14);
  }
  CHECK_THROWS_AS(softmax_attention(AttentionInputs<Tensor>{Tensor(Shape{2, 3}), Tensor(Shape{2, 4}), Tensor(Shape{2, 4})}),
                  DimensionError);
  CHECK_THROWS_AS(softmax_attention(AttentionInputs<Tensor>{Tensor(Shape{2, 3}), Tensor(Shape{2, 3}), Tensor(Shape{3, 3})}),
                  DimensionError);
}

TEST_CASE("symmetric_eigen") {
  Rng rng(3);
  for (Index d : {1, 2, 5, 16, 32}) {
    Tensor a = random_psd(d, d, rng);
    auto eig = symmetric_eigen(a);
    const Eigen::MatrixXd u = eig.vectors.matrix();
    CHECK((u.transpose() * u - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::MatrixXd recon = u * Eigen::Map<const Eigen::VectorXd>(eig.values.data(), d).asDiagonal() * u.transpose();
    CHECK((recon - Eigen::MatrixXd(a.matrix())).cwiseAbs().maxCoeff() < 1e-10 * std::max(1.0, frob(a)));
    CHECK(std::is_sorted(eig.values.rbegin(), eig.values.rend()));
    CHECK(eig.sweeps <= 100);
  }
  SUBCASE("ties keep diagonal order") {
    auto eig = symmetric_eigen(Tensor::identity(3));
    CHECK(oracle::max_abs_diff(eig.vectors, Tensor::identity(3)) == 0.0);
  }
}

TEST_CASE("low_rank_factor") {
  Rng rng(4);
  SUBCASE("identity at full rank") {
    auto f = low_rank_factor(Tensor::identity(5), 5);
    CHECK(oracle::max_abs_diff(matmul_nt(f.factor, f.factor), Tensor::identity(5)) < 1e-10);
    CHECK(f.dropped_mass == 0.0);
  }
  SUBCASE("rank one") {
    Tensor u = randn(Shape{6, 1}, rng);
    Tensor sigma = matmul_nt(u, u);
    auto f = low_rank_factor(sigma, 1);
    CHECK(f.factor.shape() == Shape{6, 1});
    CHECK(oracle::max_abs_diff(matmul_nt(f.factor, f.factor), sigma) < 1e-10);
    CHECK(f.dropped_mass <= 1e-18);
  }
  SUBCASE("random PSD against a dense eigensolver") {
    for (int trial = 0; trial < 40; ++trial) {
      const Index d = 2 + trial % 15;
      const Index c = 1 + trial % d;
      const Index r = 1 + (trial * 7) % d;
      Tensor sigma = random_psd(d, r, rng);
      auto f = low_rank_factor(sigma, c);
      const double residual = (sigma.matrix() - f.factor.matrix() * f.factor.matrix().transpose()).squaredNorm();
      if (r <= c) {
        CHECK(std::sqrt(residual) < 1e-8);
      } else {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ref(Eigen::MatrixXd(sigma.matrix()));
        double dropped = 0;  // ascending order: the d - c smallest
        for (Index i = 0; i < d - c; ++i) dropped += ref.eigenvalues()[i] * ref.eigenvalues()[i];
        CHECK(std::abs(residual - dropped) < 1e-8);
        CHECK(std::abs(f.dropped_mass - dropped) < 1e-8);
      }
      CHECK(residual <= f.dropped_mass + 1e-9);
    }
  }
  SUBCASE("errors") {
    Tensor asym = Tensor::from_rows({{1, 2}, {0, 1}});
    CHECK_THROWS_AS(low_rank_factor(asym, 1), ContractError);
    CHECK_THROWS_AS(low_rank_factor(Tensor::from_rows({{1, 0}, {0, -1}}), 1), NotPsdError);
    CHECK_THROWS_AS(low_rank_factor(Tensor::identity(3), 0), ContractError);
    CHECK_THROWS_AS(low_rank_factor(Tensor::identity(3), 4), ContractError);
    auto f = low_rank_factor(Tensor::from_rows({{1, 0}, {0, -1e-12}}), 2);
    CHECK(f.eigenvalues[1] == 0.0);
  }
}

TEST_CASE("distance_attention") {
  Rng rng(5);
  auto in = random_inputs(5, 7, 4, rng);
  CHECK(frob(distance_attention(in, Tensor(Shape{4, 4}))) == 0.0);
  Tensor linear = oracle::matmul(oracle::matmul(in.query, oracle::transpose(in.key)), in.value);
  CHECK(oracle::max_abs_diff(distance_attention(in, Tensor::identity(4)), linear) < 1e-12);
  Tensor sigma = random_psd(4, 4, rng);
  auto f = low_rank_factor(sigma, 4);
  CHECK(oracle::max_abs_diff(factored_attention(in, f.factor), distance_attention(in, sigma)) < 1e-8);
  CHECK_THROWS_AS(distance_attention(in, Tensor::identity(3)), DimensionError);
}

TEST_CASE("amlp_cov_weights") {
  Rng rng(6);
  auto in = random_inputs(4, 5, 6, rng);
  auto p = random_cov(2, 6, rng);
  auto w = amlp_cov_weights(in, p);
  CHECK(w.qk.shape() == Shape{6, 2});
  CHECK(w.qkv.shape() == Shape{2, 6});

  Tensor kappa = oracle::cov_kappa(in.query, in.key, p.query_proj, p.key_proj);
  CHECK(oracle::max_abs_diff(w.qk, oracle::transpose(kappa)) < 1e-12);
  CHECK(oracle::max_abs_diff(w.qkv, oracle::cov_qkv(kappa, in.key, in.value)) < 1e-12);

  AmlpCovParams<Tensor> zero{Tensor(Shape{2, 6}), Tensor(Shape{2, 6}), Nonlinearity::identity};
  auto wz = amlp_cov_weights(in, zero);
  CHECK(frob(wz.qk) == 0.0);
  CHECK(frob(wz.qkv) == 0.0);
  CHECK(frob(amlp_cov_forward(in, zero)) == 0.0);

  CHECK_THROWS_AS(amlp_cov_weights(in, AmlpCovParams<Tensor>{Tensor(Shape{2, 6}), Tensor(Shape{3, 6})}), DimensionError);
  CHECK_THROWS_AS(amlp_cov_weights(in, AmlpCovParams<Tensor>{Tensor(Shape{2, 5}), Tensor(Shape{2, 5})}), DimensionError);
  CHECK_THROWS_AS(amlp_cov_weights(in, AmlpCovParams<Tensor>{Tensor(Shape{7, 6}), Tensor(Shape{7, 6})}), ConfigError);
}

TEST_CASE("amlp_cov_forward") {
  Rng rng(7);
  auto in = random_inputs(4, 5, 6, rng);
  const oracle::Act acts[] = {oracle::Act::softmax, oracle::Act::relu, oracle::Act::identity};
  const Nonlinearity fs[] = {Nonlinearity::softmax, Nonlinearity::relu, Nonlinearity::identity};
  for (int i = 0; i < 3; ++i) {
    auto p = random_cov(2, 6, rng, fs[i]);
    Tensor out = amlp_cov_forward(in, p);
    CHECK(out.shape() == Shape{4, 6});
    Tensor expected = oracle::cov_forward(in.query, in.key, in.value, p.query_proj, p.key_proj, acts[i]);
    CHECK(oracle::max_abs_diff(out, expected) < 1e-12);
  }
  SUBCASE("source permutation invariance") {
    auto p = random_cov(3, 6, rng);
    std::vector<Index> perm{3, 1, 4, 0, 2};
    AttentionInputs<Tensor> shuffled{in.query, permute_rows(in.key, perm), permute_rows(in.value, perm)};
    CHECK(oracle::max_abs_diff(amlp_cov_forward(shuffled, p), amlp_cov_forward(in, p)) < 1e-12);
  }
}

TEST_CASE("ema") {
  Rng rng(8);
  Tensor q = randn(Shape{5, 3}, rng);
  CHECK(oracle::max_abs_diff(ema(q, 0.0), q) == 0.0);
  Tensor held = ema(q, 1.0);
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 3; ++j) CHECK(held(i, j) == q(0, j));
  Tensor pair = ema(Tensor::from_rows({{0}, {1}}), 0.5);
  CHECK(pair(0, 0) == 0.0);
  CHECK(pair(1, 0) == 0.5);
  CHECK(oracle::max_abs_diff(ema(q, 0.3), oracle::ema(q, 0.3)) < 1e-15);
  CHECK_THROWS_AS(ema(q, -0.1), ContractError);
  CHECK_THROWS_AS(ema(q, 1.5), ContractError);
}

TEST_CASE("amlp_pquery_weights") {
  Rng rng(9);
  auto in = random_inputs(5, 3, 4, rng);
  auto p = random_pquery(2, 4, rng, 0.5);
  auto w = amlp_pquery_weights(in, p);
  CHECK(w.qk.shape() == Shape{4, 2});
  CHECK(w.qkv.shape() == Shape{2, 4});
  Tensor lt, qkv;
  oracle::pquery_weights(in.query, in.key, in.value, p.query_proj, p.key_proj, p.mix, 0.5, lt, qkv);
  CHECK(oracle::max_abs_diff(w.qk, oracle::transpose(lt)) < 1e-12);
  CHECK(oracle::max_abs_diff(w.qkv, qkv) < 1e-12);

  SUBCASE("single source token") {
    auto one = random_inputs(5, 1, 4, rng);
    auto w1 = amlp_pquery_weights(one, p);
    for (Index r = 0; r < 2; ++r)
      for (Index c = 0; c < 4; ++c) CHECK(std::abs(w1.qkv(r, c) - one.value(0, c)) < 1e-15);
  }
  auto bad = p;
  bad.mix = Tensor(Shape{4, 4});
  CHECK_THROWS_AS(amlp_pquery_weights(in, bad), DimensionError);
  bad = p;
  bad.beta = 2.0;
  CHECK_THROWS_AS(amlp_pquery_weights(in, bad), ContractError);
}

TEST_CASE("amlp_pquery_forward") {
  Rng rng(10);
  auto in = random_inputs(5, 3, 4, rng);
  auto p = random_pquery(2, 4, rng, 0.5);
  Tensor out = amlp_pquery_forward(in, p);
  CHECK(out.shape() == Shape{5, 4});
  {
    Tensor lt, qkv;
    oracle::pquery_weights(in.query, in.key, in.value, p.query_proj, p.key_proj, p.mix, 0.5, lt, qkv);
    CHECK(oracle::max_abs_diff(out, oracle::matmul(oracle::softmax_rows(oracle::matmul(in.query, oracle::transpose(lt))), qkv)) <
          1e-12);
  }
  SUBCASE("duplicated query rows give duplicated outputs when beta is 0") {
    auto p0 = p;
    p0.beta = 0.0;
    auto dup = in;
    dup.query.matrix().row(3) = dup.query.matrix().row(1);
    Tensor o = amlp_pquery_forward(dup, p0);
    CHECK((o.matrix().row(3) - o.matrix().row(1)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("target order matters through the moving average") {
    std::vector<Index> perm{4, 2, 0, 3, 1};
    AttentionInputs<Tensor> shuffled{permute_rows(in.query, perm), in.key, in.value};
    CHECK(oracle::max_abs_diff(amlp_pquery_forward(shuffled, p), permute_rows(out, perm)) > 1e-6);
  }
}

TEST_CASE("causal AMLP-Cov recurrence") {
  Rng rng(11);
  auto init = causal_amlp_cov_init(3);
  CHECK(init.step == 0);
  CHECK(frob(init.sq) + frob(init.sk) + frob(init.z) == 0.0);

  auto p = random_cov(2, 3, rng);
  Tensor e1 = Tensor::from_rows({{1, 0, 0}});
  auto r = causal_amlp_cov_step(init, e1, e1, e1, p);
  Tensor outer = Tensor(Shape{3, 3});
  outer(0, 0) = 1.0;
  CHECK(oracle::max_abs_diff(r.state.sq, outer) == 0.0);
  CHECK(oracle::max_abs_diff(r.state.sk, outer) == 0.0);
  CHECK(oracle::max_abs_diff(r.state.z, outer) == 0.0);
  CHECK(r.state.step == 1);
  CHECK(frob(init.sq) == 0.0);
  CHECK_THROWS_AS(causal_amlp_cov_step(init, Tensor(Shape{1, 4}), e1, e1, p), DimensionError);

  SUBCASE("prefix equivalence") {
    const Nonlinearity fs[] = {Nonlinearity::softmax, Nonlinearity::relu, Nonlinearity::identity};
    for (int trial = 0; trial < 12; ++trial) {
      const Index n = 1 + (trial * 5) % 32, d = 1 + trial % 8, c = 1 + trial % std::min<Index>(4, d);
      auto in = random_inputs(n, n, d, rng);
      auto cp = random_cov(c, d, rng, fs[trial % 3]);
      Tensor causal = causal_amlp_cov_sequence(in, cp);
      for (Index t = 1; t <= n; ++t) {
        AttentionInputs<Tensor> prefix{block(in.query, 0, t, 0, d), block(in.key, 0, t, 0, d), block(in.value, 0, t, 0, d)};
        Tensor full = amlp_cov_forward(prefix, cp);
        CHECK((full.matrix().row(t - 1) - causal.matrix().row(t - 1)).cwiseAbs().maxCoeff() < 1e-10);
      }
    }
  }
  SUBCASE("state stays symmetric PSD") {
    auto in = random_inputs(20, 20, 6, rng);
    auto cp = random_cov(3, 6, rng);
    auto s = causal_amlp_cov_init(6);
    for (Index t = 0; t < 20; ++t) {
      s = causal_amlp_cov_step(s, block(in.query, t, 1, 0, 6), block(in.key, t, 1, 0, 6), block(in.value, t, 1, 0, 6), cp)
              .state;
      CHECK((s.sq.matrix() - s.sq.matrix().transpose()).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK((s.sk.matrix() - s.sk.matrix().transpose()).cwiseAbs().maxCoeff() <= 1e-12);
      for (int probe = 0; probe < 5; ++probe) {
        Eigen::VectorXd x = randn(Shape{6}, rng).matrix().transpose();
        CHECK(x.dot(s.sq.matrix() * x) / x.squaredNorm() >= -1e-10);
        CHECK(x.dot(s.sk.matrix() * x) / x.squaredNorm() >= -1e-10);
      }
    }
    Tensor kq = matmul_tn(block(in.query, 0, 20, 0, 6), block(in.query, 0, 20, 0, 6));
    CHECK(oracle::max_abs_diff(s.sq, kq) < 1e-12);
  }
}

namespace {

MultiHeadParams<Tensor> random_multihead(Mechanism mech, Index heads, Index dm, Index c, Rng& rng) {
  MultiHeadParams<Tensor> p;
  p.heads = heads;
  p.mechanism = mech;
  p.wq = init_weight(dm, dm, rng);
  p.wk = init_weight(dm, dm, rng);
  p.wv = init_weight(dm, dm, rng);
  p.wo = init_weight(dm, dm, rng);
  for (Index h = 0; h < heads; ++h) {
    p.cov.push_back(random_cov(c, dm / heads, rng));
    p.pquery.push_back(random_pquery(c, dm / heads, rng));
  }
  return p;
}

}  // namespace

TEST_CASE("multi_head_forward") {
  Rng rng(12);
  Tensor xt = randn(Shape{5, 8}, rng), xs = randn(Shape{7, 8}, rng);
  for (Mechanism mech : {Mechanism::softmax, Mechanism::cov, Mechanism::pquery}) {
    auto p = random_multihead(mech, 2, 8, 3, rng);
    CHECK(multi_head_forward(xt, xs, p).shape() == Shape{5, 8});

    auto single = random_multihead(mech, 1, 8, 3, rng);
    single.wq = single.wk = single.wv = single.wo = Tensor::identity(8);
    AttentionInputs<Tensor> in{xt, xs, xs};
    Tensor direct = mech == Mechanism::softmax ? softmax_attention(in)
                    : mech == Mechanism::cov   ? amlp_cov_forward(in, single.cov[0])
                                               : amlp_pquery_forward(in, single.pquery[0]);
    CHECK(oracle::max_abs_diff(multi_head_forward(xt, xs, single), direct) < 1e-13);
  }
  SUBCASE("two softmax heads equal manual slicing") {
    auto p = random_multihead(Mechanism::softmax, 2, 8, 3, rng);
    Tensor q = oracle::matmul(xt, p.wq), k = oracle::matmul(xs, p.wk), v = oracle::matmul(xs, p.wv);
    Tensor merged(Shape{5, 8});
    for (Index h = 0; h < 2; ++h) {
      Tensor qh(Shape{5, 4}), kh(Shape{7, 4}), vh(Shape{7, 4});
      for (Index i = 0; i < 5; ++i)
        for (Index j = 0; j < 4; ++j) qh(i, j) = q(i, 4 * h + j);
      for (Index i = 0; i < 7; ++i)
        for (Index j = 0; j < 4; ++j) {
          kh(i, j) = k(i, 4 * h + j);
          vh(i, j) = v(i, 4 * h + j);
        }
      Tensor logits = oracle::matmul(qh, oracle::transpose(kh));
      for (double& x : logits.data()) x /= 2.0;
      Tensor oh = oracle::matmul(oracle::softmax_rows(logits), vh);
      for (Index i = 0; i < 5; ++i)
        for (Index j = 0; j < 4; ++j) merged(i, 4 * h + j) = oh(i, j);
    }
    CHECK(oracle::max_abs_diff(multi_head_forward(xt, xs, p), oracle::matmul(merged, p.wo)) < 1e-12);
  }
  SUBCASE("indivisible width") {
    auto p = random_multihead(Mechanism::softmax, 3, 8, 2, rng);
    CHECK_THROWS_AS(multi_head_forward(xt, xs, p), ConfigError);
  }
}

namespace {

// Weighted sum: a plain sum hides gradients that telescope through softmax.
template <class F>
void grad_check(const std::string& name, F build, std::vector<Tensor> params) {
  Rng rng(std::hash<std::string>{}(name) + params.size());
  Tensor probe;
  auto loss = [&](Tape& t, std::span<const Var> v) -> Var {
    Var out = build(t, v);
    if (probe.size() != out.value().size()) probe = randn(out.value().shape(), rng);
    return sum(hadamard(out, t.constant(probe)));
  };
  auto report = finite_difference_check(loss, params, {1e-4, 1e-4});
  CHECK_MESSAGE(report.passed(), name << " max rel err " << report.max_rel_error());
}

}  // namespace

TEST_CASE("attention gradients match central differences") {
  Rng rng(13);
  for (int trial = 0; trial < 4; ++trial) {
    const Index n = 2 + trial * 2, m = 8 - trial, d = 2 + trial * 2, c = 1 + trial;
    auto in = random_inputs(n, m, d, rng);
    grad_check(
        "softmax_attention",
        [](Tape&, std::span<const Var> v) { return (softmax_attention(AttentionInputs<Var>{v[0], v[1], v[2]})); },
        {in.query, in.key, in.value});
    grad_check("mlp", [](Tape&, std::span<const Var> v) { return (mlp_forward(v[0], v[1], v[2])); },
               {in.query, init_weight(d, 2 * d, rng), init_weight(2 * d, d, rng)});
    for (Nonlinearity f : {Nonlinearity::softmax, Nonlinearity::relu, Nonlinearity::identity}) {
      grad_check(
          "amlp_cov",
          [f](Tape&, std::span<const Var> v) {
            return (amlp_cov_forward(AttentionInputs<Var>{v[0], v[1], v[2]}, AmlpCovParams<Var>{v[3], v[4], f}));
          },
          {in.query, in.key, in.value, init_weight(c, d, rng), init_weight(c, d, rng)});
    }
    grad_check(
        "amlp_pquery",
        [](Tape&, std::span<const Var> v) {
          return (amlp_pquery_forward(AttentionInputs<Var>{v[0], v[1], v[2]},
                                         AmlpPQueryParams<Var>{v[3], v[4], v[5], 0.5, Nonlinearity::softmax}));
        },
        {in.query, in.key, in.value, init_weight(c, d, rng), init_weight(c, d, rng), init_weight(2 * d, d, rng)});
    grad_check("ema", [](Tape&, std::span<const Var> v) { return hadamard(ema(v[0], 0.3), v[1]); },
               {in.query, randn(Shape{n, d}, rng)});
    grad_check(
        "distance_attention",
        [](Tape&, std::span<const Var> v) { return (distance_attention(AttentionInputs<Var>{v[0], v[1], v[2]}, v[3])); },
        {in.query, in.key, in.value, random_psd(d, d, rng)});
  }
  SUBCASE("multi-head wrappers") {
    Tensor xt = randn(Shape{4, 8}, rng), xs = randn(Shape{6, 8}, rng);
    for (Mechanism mech : {Mechanism::softmax, Mechanism::cov, Mechanism::pquery}) {
      auto p = random_multihead(mech, 2, 8, 2, rng);
      std::vector<Tensor> params{xt, xs, p.wq, p.wk, p.wv, p.wo};
      for (Index h = 0; h < 2; ++h) {
        params.push_back(mech == Mechanism::pquery ? p.pquery[h].query_proj : p.cov[h].query_proj);
        params.push_back(mech == Mechanism::pquery ? p.pquery[h].key_proj : p.cov[h].key_proj);
        params.push_back(p.pquery[h].mix);
      }
      grad_check(
          "multi_head",
          [mech](Tape&, std::span<const Var> v) {
            MultiHeadParams<Var> mp;
            mp.heads = 2;
            mp.mechanism = mech;
            mp.wq = v[2];
            mp.wk = v[3];
            mp.wv = v[4];
            mp.wo = v[5];
            for (int h = 0; h < 2; ++h) {
              mp.cov.push_back({v[6 + 3 * h], v[7 + 3 * h], Nonlinearity::softmax});
              mp.pquery.push_back({v[6 + 3 * h], v[7 + 3 * h], v[8 + 3 * h], 0.5, Nonlinearity::softmax});
            }
            return (multi_head_forward(v[0], v[1], mp));
          },
          params);
    }
  }
}

TEST_CASE("summed outputs on 4x8 inputs") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto in = random_inputs(4, 4, 8, rng);
    auto sm = finite_difference_check(
        [](Tape&, std::span<const Var> p) { return sum(softmax_attention(AttentionInputs<Var>{p[0], p[1], p[2]})); },
        std::vector<Tensor>{in.query, in.key, in.value}, {1e-4, 1e-5});
    CHECK_MESSAGE(sm.passed(), "softmax seed " << seed << " err " << sm.max_rel_error());

    auto cov = random_cov(4, 8, rng);
    auto cov_loss = [](Tape&, std::span<const Var> p) {
      return sum(amlp_cov_forward(AttentionInputs<Var>{p[0], p[1], p[2]}, AmlpCovParams<Var>{p[3], p[4], Nonlinearity::softmax}));
    };
    const std::vector<Tensor> ps{in.query, in.key, in.value, cov.query_proj, cov.key_proj};
    auto rep = finite_difference_check(cov_loss, ps, {1e-4, 1e-5});
    for (std::size_t j : {0u, 1u, 3u, 4u})
      CHECK_MESSAGE(rep.params[j].max_rel_error < 1e-5, "cov param " << j << " seed " << seed);
    // rows of softmax(K^T V) sum to one, so the summed output ignores V
    const Tensor gv = tape_gradients(cov_loss, ps)[2];
    CHECK(gv.matrix().cwiseAbs().maxCoeff() < 1e-12);
    Tensor v2 = randn(Shape{4, 8}, rng);
    const double f1 = amlp_cov_forward(in, cov).matrix().sum();
    const double f2 = amlp_cov_forward(AttentionInputs<Tensor>{in.query, in.key, v2}, cov).matrix().sum();
    CHECK(std::abs(f1 - f2) < 1e-12 * std::max(1.0, std::abs(f1)));
  }
}

TEST_CASE("forwards are deterministic") {
  auto run = [] {
    Rng rng(99);
    auto in = random_inputs(6, 7, 5, rng);
    auto cp = random_cov(3, 5, rng);
    auto pp = random_pquery(3, 5, rng);
    return std::make_pair(amlp_cov_forward(in, cp), amlp_pquery_forward(in, pp));
  };
  auto a = run(), b = run();
  CHECK(std::memcmp(a.first.data().data(), b.first.data().data(), sizeof(double) * a.first.size()) == 0);
  CHECK(std::memcmp(a.second.data().data(), b.second.data().data(), sizeof(double) * a.second.size()) == 0);
}
