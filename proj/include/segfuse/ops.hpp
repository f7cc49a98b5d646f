#pragma once

#include <cstddef>
#include <vector>

#include "segfuse/tensor.hpp"

namespace segfuse {

enum class ElementwiseOp { kAdd, kSub, kMul };

/// Binary op with numpy-style broadcasting over singleton extents.
Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

/// a[..., m, k] x b[..., k, n]. Leading extents must match, or b may be a
/// plain 2-D matrix shared across the batch.
Tensor matmul(const Tensor& a, const Tensor& b);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

/// x[N,Cin,H,W], weight[Cout,Cin/groups,kh,kw], optional bias[Cout].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias = {},
              Conv2dOptions options = {});

/// x[N,Cin,H,W], weight[Cin,Cout,kh,kw], no padding:
/// out extent = (H - 1) * stride + kh.
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias = {},
                        std::size_t stride = 2);

/// Per-channel normalization over (N,H,W). In training mode batch statistics
/// are used and the running buffers are updated in place (running_var takes
/// the unbiased batch variance).
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  double eps = 1e-5, double momentum = 0.1);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor swish(const Tensor& x);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);

/// Normalizes over the last axis; gamma and beta have that extent.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor upsample_nearest(const Tensor& x, std::size_t factor);
Tensor global_avg_pool(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdim);
Tensor mean(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdim);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);

namespace detail {

/// Records the activation pattern of every kink-bearing op (relu) while
/// installed, so finite-difference probes that straddle a kink can be
/// identified and skipped.
class KinkRecorder {
 public:
  KinkRecorder();
  ~KinkRecorder();
  KinkRecorder(const KinkRecorder&) = delete;
  KinkRecorder& operator=(const KinkRecorder&) = delete;

  void record(bool positive) { pattern_.push_back(positive); }
  const std::vector<bool>& pattern() const { return pattern_; }

 private:
  std::vector<bool> pattern_;
  KinkRecorder* previous_;
};

KinkRecorder* active_kink_recorder();

}  // namespace detail
}  // namespace segfuse
