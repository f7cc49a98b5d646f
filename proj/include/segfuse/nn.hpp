#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "segfuse/ops.hpp"
#include "segfuse/param_store.hpp"

namespace segfuse {

/// Creates parameters and buffers under a dotted path prefix.
/// Weights are uniform in +/-1/sqrt(fan_in), biases zero, norm affine ones/zeros.
class ParamBuilder {
 public:
  ParamBuilder(ParamStore& params, ParamStore& buffers, std::uint64_t seed, std::string prefix = "");

  ParamBuilder child(const std::string& name) const;
  std::string path(const std::string& name) const;

  Tensor weight(const std::string& name, const Shape& shape, std::size_t fan_in) const;
  Tensor zeros(const std::string& name, const Shape& shape) const;
  Tensor ones(const std::string& name, const Shape& shape) const;
  Tensor buffer(const std::string& name, const Shape& shape, double value) const;

  std::uint64_t seed() const { return seed_; }

 private:
  ParamStore* params_;
  ParamStore* buffers_;
  std::uint64_t seed_;
  std::string prefix_;
};

enum class Activation { kNone, kRelu, kSwish };

Tensor activate(const Tensor& x, Activation act);

struct Conv2d {
  Conv2d() = default;
  Conv2d(const ParamBuilder& pb, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         Conv2dOptions options = {}, bool with_bias = false);
  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, options); }

  Tensor weight;
  Tensor bias;
  Conv2dOptions options;
};

struct BatchNorm2d {
  BatchNorm2d() = default;
  BatchNorm2d(const ParamBuilder& pb, std::size_t channels, double eps = 1e-5, double momentum = 0.1);
  Tensor operator()(const Tensor& x, bool training);

  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double eps = 1e-5;
  double momentum = 0.1;
};

/// Affine map over the last axis. weight is [d_in, d_out] so y = x W + b.
struct Linear {
  Linear() = default;
  Linear(const ParamBuilder& pb, std::size_t d_in, std::size_t d_out, bool with_bias = true);
  Tensor operator()(const Tensor& x) const;

  Tensor weight;
  Tensor bias;
};

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct LayerNorm {
  LayerNorm() = default;
  LayerNorm(const ParamBuilder& pb, std::size_t dim, double eps = 1e-5);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }

  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;
};

struct NormConfig {
  double eps = 1e-5;
  double momentum = 0.1;
};

/// conv -> batch norm -> activation.
struct ConvBnAct {
  ConvBnAct() = default;
  ConvBnAct(const ParamBuilder& pb, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
            Conv2dOptions options, Activation act, NormConfig norm = {});
  Tensor operator()(const Tensor& x, bool training);

  Conv2d conv;
  BatchNorm2d bn;
  Activation act = Activation::kNone;
};

/// Two rounds of 3x3 conv (padding 1) -> BN -> ReLU.
struct DoubleConv {
  DoubleConv() = default;
  DoubleConv(const ParamBuilder& pb, std::size_t in_channels, std::size_t out_channels, NormConfig norm = {});
  Tensor operator()(const Tensor& x, bool training);

  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  ConvBnAct first;
  ConvBnAct second;
};

/// gates = sigmoid(W2 swish(W1 gap(x))), output x * gates.
struct SqueezeExcite {
  SqueezeExcite() = default;
  SqueezeExcite(const ParamBuilder& pb, std::size_t channels, std::size_t reduced);
  Tensor gates(const Tensor& x) const;
  Tensor operator()(const Tensor& x) const { return x * gates(x); }

  Conv2d reduce;
  Conv2d expand;
};

struct BlockSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  double expansion_ratio = 6.0;
  double se_ratio = 0.25;
  bool use_se = true;

  std::size_t expanded_channels() const;
  bool has_residual() const { return stride == 1 && in_channels == out_channels; }
  void validate() const;
};

/// Mobile inverted bottleneck: 1x1 expand (BN, swish) -> depthwise kxk
/// (BN, swish) -> squeeze-excite -> 1x1 project (BN) -> residual add.
struct MBConv {
  MBConv() = default;
  MBConv(const ParamBuilder& pb, const BlockSpec& spec, NormConfig norm = {});
  Tensor operator()(const Tensor& x, bool training);

  BlockSpec spec;
  std::optional<ConvBnAct> expand;
  ConvBnAct depthwise;
  std::optional<SqueezeExcite> se;
  ConvBnAct project;
};

void require_channels(const Tensor& x, std::size_t channels, const char* where);

}  // namespace segfuse
