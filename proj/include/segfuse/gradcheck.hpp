#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

#include "segfuse/tensor.hpp"

namespace segfuse {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
};

/// Compares the reverse-mode gradient of scalar-valued f at x against central
/// differences. Per coordinate the error is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
/// Coordinates whose +/-delta probes change the on/off pattern of any relu
/// are skipped (nondifferentiable point inside the stencil).
/// x is perturbed in place and restored; it may be a parameter that f closes
/// over rather than reads from its argument. Throws when f is not scalar.
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double delta = 1e-5);

/// Same check for tensor-valued f, contracted with a fixed random weight
/// tensor W (uniform in [-1, 1], drawn from `seed`). The analytic side
/// differentiates sum(f(x) * W); the numeric side sums
/// W_j * (f(x + d)_j - f(x - d)_j) term by term, so outputs a coordinate does
/// not reach contribute exactly zero and roundoff stays local.
GradCheckResult grad_check_projected(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                                     double delta = 1e-5, std::uint64_t seed = 0);

}  // namespace segfuse
