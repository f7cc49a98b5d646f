#include "segfuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "segfuse/ops.hpp"
#include "segfuse/rng.hpp"

namespace segfuse {

namespace {

struct Probe {
  std::vector<double> values;
  std::vector<bool> pattern;
};

Probe evaluate(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
  NoGradGuard no_grad;
  detail::KinkRecorder rec;
  const Tensor y = f(x);
  return {y.values(), rec.pattern()};
}

GradCheckResult check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double delta, bool projected,
                      std::uint64_t seed) {
  const bool had_grad = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();

  std::vector<bool> base_pattern;
  std::vector<double> weights;
  std::vector<double> analytic;
  {
    detail::KinkRecorder rec;
    const Tensor y = f(x);
    base_pattern = rec.pattern();
    if (!projected && y.numel() != 1) {
      x.set_requires_grad(had_grad);
      throw std::invalid_argument("grad_check: f must be scalar-valued, got shape " + shape_str(y.shape()));
    }
    if (!projected) {
      weights.assign(1, 1.0);
      y.backward();
    } else {
      SplitMix64 rng(seed);
      weights.resize(y.numel());
      for (double& w : weights) w = rng.uniform(-1.0, 1.0);
      sum(y * Tensor::from(y.shape(), weights)).backward();
    }
    analytic.assign(x.grad().begin(), x.grad().end());
  }

  GradCheckResult result;
  auto data = x.mutable_data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double original = data[i];
    data[i] = original + delta;
    const Probe plus = evaluate(f, x);
    data[i] = original - delta;
    const Probe minus = evaluate(f, x);
    data[i] = original;
    if (plus.pattern != base_pattern || minus.pattern != base_pattern) {
      ++result.skipped_kinks;
      continue;
    }
    double diff = 0.0;
    for (std::size_t j = 0; j < weights.size(); ++j) diff += weights[j] * (plus.values[j] - minus.values[j]);
    const double numeric = diff / (2.0 * delta);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    result.max_rel_error = std::max(result.max_rel_error, std::abs(analytic[i] - numeric) / denom);
    ++result.checked;
  }
  x.zero_grad();
  x.set_requires_grad(had_grad);
  return result;
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double delta) {
  return check(f, std::move(x), delta, false, 0);
}

GradCheckResult grad_check_projected(const std::function<Tensor(const Tensor&)>& f, Tensor x, double delta,
                                     std::uint64_t seed) {
  return check(f, std::move(x), delta, true, seed);
}

}  // namespace segfuse
