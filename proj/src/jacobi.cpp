#include "amlp/jacobi.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace amlp {

namespace {
constexpr int kMaxSweeps = 100;
constexpr double kRelativeOffDiagonal = 1e-12;
}  // namespace

SymmetricEigen symmetric_eigen(const Tensor& input) {
  if (input.rank() != 2 || input.rows() != input.cols())
    throw DimensionError("symmetric_eigen expects a square matrix, got " + input.shape().str());
  const Index d = input.rows();
  Eigen::MatrixXd a = input.matrix();
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(d, d);
  const double threshold = kRelativeOffDiagonal * a.norm();

  int sweep = 0;
  for (; sweep < kMaxSweeps; ++sweep) {
    double off = 0.0;
    for (Index p = 0; p < d; ++p)
      for (Index q = p + 1; q < d; ++q) off = std::max(off, std::abs(a(p, q)));
    if (off <= threshold) break;

    for (Index p = 0; p < d; ++p) {
      for (Index q = p + 1; q < d; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Index k = 0; k < d; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Index k = 0; k < d; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (Index k = 0; k < d; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<Index> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index i, Index j) { return a(i, i) > a(j, j); });

  SymmetricEigen out;
  out.sweeps = sweep;
  out.vectors = Tensor(Shape{d, d});
  for (Index k = 0; k < d; ++k) {
    out.values.push_back(a(order[k], order[k]));
    out.vectors.matrix().col(k) = v.col(order[k]);
  }
  return out;
}

}  // namespace amlp
