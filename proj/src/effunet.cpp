#include "segfuse/effunet.hpp"

#include <stdexcept>

namespace segfuse {

std::size_t UNetConfig::stage_factor(std::size_t stage) const {
  std::size_t f = 2;  // stem
  for (std::size_t s = 0; s <= stage && s < stages.size(); ++s) f *= stages[s].stride;
  return f;
}

void UNetConfig::validate() const {
  if (stages.size() < 3) throw std::invalid_argument("UNetConfig: need at least 3 stages");
  for (const auto& s : stages) {
    if (s.width == 0 || s.depth == 0) throw std::invalid_argument("UNetConfig: stage width/depth must be positive");
    if (s.stride != 1 && s.stride != 2) throw std::invalid_argument("UNetConfig: stage stride must be 1 or 2");
  }
  for (std::size_t i = 0; i < skip_stages.size(); ++i) {
    if (skip_stages[i] >= stages.size()) throw std::invalid_argument("UNetConfig: skip stage out of range");
    if (i > 0 && skip_stages[i] <= skip_stages[i - 1]) {
      throw std::invalid_argument("UNetConfig: skip stages must be strictly increasing");
    }
    if (stage_factor(skip_stages[i]) >= total_stride()) {
      throw std::invalid_argument("UNetConfig: skip stage " + std::to_string(skip_stages[i]) +
                                  " is at bottleneck resolution");
    }
    if (i > 0 && stage_factor(skip_stages[i]) == stage_factor(skip_stages[i - 1])) {
      throw std::invalid_argument("UNetConfig: two skip stages share one resolution");
    }
  }
  if (out_channels == 0) throw std::invalid_argument("UNetConfig: out_channels must be positive");
}

UpLevel::UpLevel(const ParamBuilder& pb, std::size_t in, std::size_t skip, std::size_t out, NormConfig norm)
    : in_channels(in), up_channels(std::max<std::size_t>(1, in / 2)), skip_channels(skip) {
  const ParamBuilder up = pb.child("up");
  up_weight = up.weight("w", {in, up_channels, 2, 2}, in * 4);
  up_bias = up.zeros("b", {up_channels});
  conv = DoubleConv(pb.child("conv"), up_channels + skip, out, norm);
}

Tensor UpLevel::operator()(const Tensor& x, const Tensor* skip, bool training) {
  require_channels(x, in_channels, "decoder level");
  Tensor h = conv_transpose2d(x, up_weight, up_bias, 2);
  if (skip) {
    if (skip->dim() != 4 || skip->size(0) != h.size(0) || skip->size(1) != skip_channels ||
        skip->size(2) != h.size(2) || skip->size(3) != h.size(3)) {
      throw std::invalid_argument("decoder: skip " + shape_str(skip->shape()) + " does not match upsampled " +
                                  shape_str(h.shape()) + " with " + std::to_string(skip_channels) + " channels");
    }
    h = concat({h, *skip}, 1);
  }
  return conv(h, training);
}

EffUNet::EffUNet(const ParamBuilder& pb, std::size_t in_channels, const UNetConfig& cfg, NormConfig norm) : cfg_(cfg) {
  cfg_.validate();
  const ParamBuilder enc = pb.child("enc");
  stem_ = ConvBnAct(enc.child("stem"), in_channels, cfg_.stem_width, 3, {2, 1, 1}, Activation::kSwish, norm);
  std::size_t width = cfg_.stem_width;
  for (std::size_t s = 0; s < cfg_.stages.size(); ++s) {
    stages_.emplace_back(enc.child("stage" + std::to_string(s)), width, cfg_.stages[s], cfg_.se_ratio, cfg_.use_se,
                         norm);
    width = cfg_.stages[s].width;
  }

  // Walk resolutions from the bottleneck back to the input, one doubling per
  // level, attaching the skip that lives at each resolution.
  const ParamBuilder dec = pb.child("dec");
  std::size_t factor = cfg_.total_stride();
  std::size_t level = 0;
  while (factor > 1) {
    factor /= 2;
    std::ptrdiff_t skip_index = -1;
    for (std::size_t i = 0; i < cfg_.skip_stages.size(); ++i) {
      if (cfg_.stage_factor(cfg_.skip_stages[i]) == factor) skip_index = static_cast<std::ptrdiff_t>(i);
    }
    const std::size_t skip_ch = skip_index >= 0 ? cfg_.stages[cfg_.skip_stages[skip_index]].width : 0;
    const std::size_t up_ch = std::max<std::size_t>(1, width / 2);
    const std::size_t out = factor == 1 ? cfg_.out_channels : (skip_index >= 0 ? skip_ch : up_ch);
    levels_.emplace_back(dec.child("level" + std::to_string(level)), width, skip_ch, out, norm);
    level_skip_.push_back(skip_index);
    width = out;
    ++level;
  }
}

EncoderOutput EffUNet::encode(const Tensor& x, bool training) {
  const std::size_t stride = cfg_.total_stride();
  if (x.dim() != 4 || x.size(2) % stride != 0 || x.size(3) % stride != 0) {
    throw std::invalid_argument("effunet: spatial extents of " + shape_str(x.shape()) +
                                " must be divisible by " + std::to_string(stride));
  }
  EncoderOutput out;
  Tensor h = stem_(x, training);
  std::size_t next_skip = 0;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    h = stages_[s](h, training);
    if (next_skip < cfg_.skip_stages.size() && cfg_.skip_stages[next_skip] == s) {
      out.skips.push_back(h);
      ++next_skip;
    }
  }
  out.bottleneck = h;
  return out;
}

Tensor EffUNet::decode(const Tensor& bottleneck, const std::vector<Tensor>& skips, bool training) {
  if (skips.size() != cfg_.skip_stages.size()) {
    throw std::invalid_argument("effunet: expected " + std::to_string(cfg_.skip_stages.size()) + " skips, got " +
                                std::to_string(skips.size()));
  }
  Tensor h = bottleneck;
  for (std::size_t l = 0; l < levels_.size(); ++l) {
    const Tensor* skip = level_skip_[l] >= 0 ? &skips[static_cast<std::size_t>(level_skip_[l])] : nullptr;
    h = levels_[l](h, skip, training);
  }
  return h;
}

}  // namespace segfuse
