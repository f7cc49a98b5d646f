#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "segfuse/gradcheck.hpp"

namespace segfuse {

/// One seeded gradient check: random inputs and parameters are drawn from the
/// seed, then f is checked against central differences.
struct GradCase {
  std::string name;    // "<module>.<input>", e.g. "conv2d.weight"
  bool composite = false;
  std::function<GradCheckResult(std::uint64_t seed)> run;

  /// 1e-6 for single operations, 1e-5 for composite blocks.
  double tolerance() const { return composite ? 1e-5 : 1e-6; }
};

/// Every differentiable operation and composite block, one case per input.
const std::vector<GradCase>& gradient_cases();

/// Cases whose name equals `module` or starts with "<module>.".
std::vector<GradCase> gradient_cases_for(const std::string& module);

}  // namespace segfuse
