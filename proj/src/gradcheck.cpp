#include "amlp/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace amlp {

bool GradCheckReport::passed() const {
  return std::all_of(params.begin(), params.end(), [](const ParamCheck& p) { return p.passed; });
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& p : params) m = std::max(m, p.max_rel_error);
  return m;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

std::vector<Tensor> tape_gradients(const ScalarGraph& f, std::span<const Tensor> params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor& p : params) vars.push_back(tape.parameter(p));
  Var loss = f(tape, vars);
  tape.backward(loss);
  std::vector<Tensor> grads;
  grads.reserve(vars.size());
  for (const Var& v : vars) grads.push_back(v.grad());
  return grads;
}

namespace {

double evaluate(const ScalarGraph& f, std::span<const Tensor> params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor& p : params) vars.push_back(tape.constant(p));
  return f(tape, vars).value()[0];
}

}  // namespace

GradCheckReport finite_difference_check(const ScalarGraph& f, std::span<const Tensor> params,
                                        const GradCheckOptions& options, std::span<const std::string> names) {
  if (options.step < 1e-6 || options.step > 1e-3) throw ContractError("finite-difference step must lie in [1e-6, 1e-3]");
  if (!names.empty() && names.size() != params.size()) throw ContractError("one name per parameter expected");

  const std::vector<Tensor> analytic = tape_gradients(f, params);
  std::vector<Tensor> work(params.begin(), params.end());

  GradCheckReport report;
  for (std::size_t p = 0; p < work.size(); ++p) {
    ParamCheck check;
    check.name = names.empty() ? "param" + std::to_string(p) : names[p];
    const Index n = work[p].size();
    const Index stride = options.max_entries_per_param > 0 && n > options.max_entries_per_param
                             ? (n + options.max_entries_per_param - 1) / options.max_entries_per_param
                             : 1;
    for (Index i = 0; i < n; i += stride) {
      const double saved = work[p][i];
      work[p][i] = saved + options.step;
      const double up = evaluate(f, work);
      work[p][i] = saved - options.step;
      const double down = evaluate(f, work);
      work[p][i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double err = relative_error(analytic[p][i], numeric);
      if (err > check.max_rel_error || check.worst_entry < 0) {
        check.max_rel_error = std::max(check.max_rel_error, err);
        if (err >= check.max_rel_error) check.worst_entry = i;
      }
      ++check.checked;
    }
    check.passed = check.max_rel_error <= options.tolerance;
    report.params.push_back(std::move(check));
  }
  return report;
}

}  // namespace amlp
