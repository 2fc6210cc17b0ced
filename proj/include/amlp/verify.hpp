#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace amlp {

struct PropertyResult {
  std::string name;
  bool passed = false;
  double max_error = 0.0;  ///< worst observed deviation, property-specific units
  double tolerance = 0.0;
  long instances = 0;
};

struct VerifyOptions {
  std::uint64_t seed = 1;
  /// Negative control: scales the softmax backward rule by 1.01.
  bool break_gradients = false;
};

/// The fast invariant suite. Results carry no timings, so equal seeds give
/// equal output.
std::vector<PropertyResult> run_verify_suite(const VerifyOptions& options);

std::string to_json_line(const PropertyResult& r);
std::string to_text_line(const PropertyResult& r);

}  // namespace amlp
