#include "segfuse/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace segfuse {

ParamBuilder::ParamBuilder(ParamStore& params, ParamStore& buffers, std::uint64_t seed, std::string prefix)
    : params_(&params), buffers_(&buffers), seed_(seed), prefix_(std::move(prefix)) {}

ParamBuilder ParamBuilder::child(const std::string& name) const {
  return ParamBuilder(*params_, *buffers_, seed_, path(name));
}

std::string ParamBuilder::path(const std::string& name) const {
  return prefix_.empty() ? name : prefix_ + "." + name;
}

Tensor ParamBuilder::weight(const std::string& name, const Shape& shape, std::size_t fan_in) const {
  const std::string p = path(name);
  return params_->add(p, fan_in_uniform(shape, fan_in, seed_, p));
}

Tensor ParamBuilder::zeros(const std::string& name, const Shape& shape) const {
  return params_->add(path(name), Tensor::zeros(shape, true));
}

Tensor ParamBuilder::ones(const std::string& name, const Shape& shape) const {
  return params_->add(path(name), Tensor::full(shape, 1.0, true));
}

Tensor ParamBuilder::buffer(const std::string& name, const Shape& shape, double value) const {
  return buffers_->add(path(name), Tensor::full(shape, value, false));
}

Tensor activate(const Tensor& x, Activation act) {
  switch (act) {
    case Activation::kRelu:
      return relu(x);
    case Activation::kSwish:
      return swish(x);
    case Activation::kNone:
      break;
  }
  return x;
}

void require_channels(const Tensor& x, std::size_t channels, const char* where) {
  if (x.dim() != 4 || x.size(1) != channels) {
    throw std::invalid_argument(std::string(where) + ": expected " + std::to_string(channels) +
                                " channels in NCHW input, got " + shape_str(x.shape()));
  }
}

Conv2d::Conv2d(const ParamBuilder& pb, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
               Conv2dOptions opts, bool with_bias)
    : options(opts) {
  if (opts.groups == 0 || in_channels % opts.groups != 0) {
    throw std::invalid_argument("Conv2d: in_channels not divisible by groups");
  }
  const std::size_t cin_g = in_channels / opts.groups;
  weight = pb.weight("w", {out_channels, cin_g, kernel, kernel}, cin_g * kernel * kernel);
  if (with_bias) bias = pb.zeros("b", {out_channels});
}

BatchNorm2d::BatchNorm2d(const ParamBuilder& pb, std::size_t channels, double eps_, double momentum_)
    : eps(eps_), momentum(momentum_) {
  gamma = pb.ones("gamma", {channels});
  beta = pb.zeros("beta", {channels});
  running_mean = pb.buffer("running_mean", {channels}, 0.0);
  running_var = pb.buffer("running_var", {channels}, 1.0);
}

Tensor BatchNorm2d::operator()(const Tensor& x, bool training) {
  return batch_norm(x, gamma, beta, running_mean, running_var, training, eps, momentum);
}

Linear::Linear(const ParamBuilder& pb, std::size_t d_in, std::size_t d_out, bool with_bias) {
  weight = pb.weight("w", {d_in, d_out}, d_in);
  if (with_bias) bias = pb.zeros("b", {d_out});
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.dim() < 1 || weight.dim() != 2 || x.shape().back() != weight.size(0)) {
    throw std::invalid_argument("linear: input " + shape_str(x.shape()) + " does not match weight " +
                                shape_str(weight.shape()));
  }
  const std::size_t d_in = weight.size(0);
  const std::size_t d_out = weight.size(1);
  Shape out_shape = x.shape();
  out_shape.back() = d_out;
  Tensor y = matmul(reshape(x, {x.numel() / d_in, d_in}), weight);
  if (bias.defined()) y = y + bias;
  return reshape(y, out_shape);
}

Tensor Linear::operator()(const Tensor& x) const { return linear(x, weight, bias); }

LayerNorm::LayerNorm(const ParamBuilder& pb, std::size_t dim, double eps_) : eps(eps_) {
  gamma = pb.ones("gamma", {dim});
  beta = pb.zeros("beta", {dim});
}

ConvBnAct::ConvBnAct(const ParamBuilder& pb, std::size_t in_channels, std::size_t out_channels,
                     std::size_t kernel, Conv2dOptions options, Activation act_, NormConfig norm)
    : conv(pb.child("conv"), in_channels, out_channels, kernel, options),
      bn(pb.child("bn"), out_channels, norm.eps, norm.momentum),
      act(act_) {}

Tensor ConvBnAct::operator()(const Tensor& x, bool training) {
  return activate(bn(conv(x), training), act);
}

DoubleConv::DoubleConv(const ParamBuilder& pb, std::size_t in, std::size_t out, NormConfig norm)
    : in_channels(in),
      out_channels(out),
      first(pb.child("conv1"), in, out, 3, {1, 1, 1}, Activation::kRelu, norm),
      second(pb.child("conv2"), out, out, 3, {1, 1, 1}, Activation::kRelu, norm) {}

Tensor DoubleConv::operator()(const Tensor& x, bool training) {
  require_channels(x, in_channels, "DoubleConv");
  return second(first(x, training), training);
}

SqueezeExcite::SqueezeExcite(const ParamBuilder& pb, std::size_t channels, std::size_t reduced)
    : reduce(pb.child("reduce"), channels, reduced, 1, {}, true),
      expand(pb.child("expand"), reduced, channels, 1, {}, true) {}

Tensor SqueezeExcite::gates(const Tensor& x) const {
  return sigmoid(expand(swish(reduce(global_avg_pool(x)))));
}

std::size_t BlockSpec::expanded_channels() const {
  return static_cast<std::size_t>(std::llround(static_cast<double>(in_channels) * expansion_ratio));
}

void BlockSpec::validate() const {
  if (in_channels == 0 || out_channels == 0) throw std::invalid_argument("BlockSpec: channel counts must be positive");
  if (kernel % 2 == 0) throw std::invalid_argument("BlockSpec: kernel must be odd");
  if (stride != 1 && stride != 2) throw std::invalid_argument("BlockSpec: stride must be 1 or 2");
  if (!(expansion_ratio > 0.0) || expanded_channels() < 1) {
    throw std::invalid_argument("BlockSpec: expansion ratio yields no channels");
  }
  if (use_se && !(se_ratio > 0.0 && se_ratio <= 1.0)) throw std::invalid_argument("BlockSpec: se_ratio must lie in (0,1]");
}

MBConv::MBConv(const ParamBuilder& pb, const BlockSpec& s, NormConfig norm) : spec(s) {
  spec.validate();
  const std::size_t mid = spec.expanded_channels();
  if (mid != spec.in_channels) {
    expand.emplace(pb.child("expand"), spec.in_channels, mid, 1, Conv2dOptions{}, Activation::kSwish, norm);
  }
  depthwise = ConvBnAct(pb.child("dwconv"), mid, mid, spec.kernel,
                        Conv2dOptions{spec.stride, spec.kernel / 2, mid}, Activation::kSwish, norm);
  if (spec.use_se) {
    const auto reduced = static_cast<std::size_t>(
        std::max<long long>(1, std::llround(static_cast<double>(spec.in_channels) * spec.se_ratio)));
    se.emplace(pb.child("se"), mid, reduced);
  }
  project = ConvBnAct(pb.child("project"), mid, spec.out_channels, 1, Conv2dOptions{}, Activation::kNone, norm);
}

Tensor MBConv::operator()(const Tensor& x, bool training) {
  require_channels(x, spec.in_channels, "MBConv");
  Tensor h = expand ? (*expand)(x, training) : x;
  h = depthwise(h, training);
  if (se) h = (*se)(h);
  h = project(h, training);
  return spec.has_residual() ? h + x : h;
}

}  // namespace segfuse
