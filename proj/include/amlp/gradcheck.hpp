#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "amlp/tape.hpp"

namespace amlp {

/// Builds a scalar loss on `tape` from the lifted parameters. Must be pure:
/// the same parameter values always give the same loss.
using ScalarGraph = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct GradCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-4;
  /// 0 checks every entry; otherwise an evenly strided subset of this size.
  Index max_entries_per_param = 0;
};

struct ParamCheck {
  std::string name;
  double max_rel_error = 0.0;
  Index worst_entry = -1;
  Index checked = 0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;

  bool passed() const;
  double max_rel_error() const;
};

/// |a-b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b);

/// Compares tape gradients against central differences
/// (f(p + h e_i) - f(p - h e_i)) / 2h, entry by entry.
GradCheckReport finite_difference_check(const ScalarGraph& f, std::span<const Tensor> params,
                                        const GradCheckOptions& options = {},
                                        std::span<const std::string> names = {});

/// Tape-gradient of f at params, one tensor per parameter.
std::vector<Tensor> tape_gradients(const ScalarGraph& f, std::span<const Tensor> params);

}  // namespace amlp
