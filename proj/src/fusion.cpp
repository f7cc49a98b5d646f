#include "segfuse/fusion.hpp"

#include <cmath>
#include <stdexcept>

namespace segfuse {

const char* class_name(std::size_t id) {
  static constexpr const char* kNames[] = {"impervious", "building", "low_vegetation", "tree", "car", "clutter"};
  return id < kNumClasses ? kNames[id] : "unknown";
}

InputFusion::InputFusion(const ParamBuilder& pb, NormConfig norm)
    : image_branch(pb.child("image"), 3, 3, 3, {1, 1, 1}, Activation::kRelu, norm),
      dsm_branch(pb.child("dsm"), 1, 3, 3, {1, 1, 1}, Activation::kRelu, norm),
      fused_bn(pb.child("fused_bn"), 3, norm.eps, norm.momentum) {}

Tensor InputFusion::fused_term(const Tensor& image, const Tensor& dsm, bool training) {
  require_channels(image, 3, "input fusion image");
  require_channels(dsm, 1, "input fusion dsm");
  if (image.size(0) != dsm.size(0) || image.size(2) != dsm.size(2) || image.size(3) != dsm.size(3)) {
    throw std::invalid_argument("input fusion: image " + shape_str(image.shape()) + " and dsm " +
                                shape_str(dsm.shape()) + " disagree on N, H, W");
  }
  return fused_bn(image_branch(image, training) * dsm_branch(dsm, training), training);
}

Tensor InputFusion::operator()(const Tensor& image, const Tensor& dsm, bool training) {
  return fused_term(image, dsm, training) + image;
}

PathFusion::PathFusion(const ParamBuilder& pb, std::size_t c, std::size_t num_classes, NormConfig norm)
    : channels(c), conv(pb.child("conv"), c, num_classes, norm) {}

Tensor PathFusion::operator()(const Tensor& global, const Tensor& local, bool training) {
  require_channels(local, channels, "path fusion");
  if (!global.defined()) return conv(local, training);
  if (global.shape() != local.shape()) {
    throw std::invalid_argument("path fusion: " + shape_str(global.shape()) + " vs " + shape_str(local.shape()));
  }
  return conv(global + local, training);
}

ClassHead::ClassHead(const ParamBuilder& pb, std::size_t id, std::size_t channels, const HeadConfig& cfg)
    : class_id(id), in_channels(channels), channel_split(cfg.channel_split) {
  if (id >= channels) {
    throw std::invalid_argument("class head: class id " + std::to_string(id) + " outside [0, " +
                                std::to_string(channels) + ")");
  }
  const std::size_t head_in = cfg.channel_split ? 1 : channels;
  AttentionConfig dec_cfg = cfg.encoder;
  dec_cfg.heads = cfg.channel_split ? 1 : cfg.decoder_heads;
  tokenizer = Tokenizer(pb.child("tokenizer"), head_in, cfg.num_tokens, cfg.token_dim);
  encoder = TransformerEncoder(pb.child("encoder"), cfg.token_dim, cfg.encoder);
  decoder = TransformerDecoder(pb.child("decoder"), head_in, cfg.token_dim, dec_cfg);
  classifier = Conv2d(pb.child("classifier"), head_in, 2, 1, {}, true);
}

namespace {

Tensor select_channel(const Tensor& x, std::size_t channel) {
  // 1x1 selection expressed as a fixed one-hot mask plus channel sum keeps the
  // op differentiable without a dedicated slice op.
  const std::size_t c = x.size(1);
  std::vector<double> mask(c, 0.0);
  mask[channel] = 1.0;
  const Tensor m = Tensor::from({1, c, 1, 1}, std::move(mask));
  return sum(x * m, {1}, true);
}

}  // namespace

Tensor ClassHead::operator()(const Tensor& features) const {
  require_channels(features, in_channels, "class head");
  const Tensor x = channel_split ? select_channel(features, class_id) : features;
  const Tensor tokens = encoder(tokenizer(x));
  return log_softmax(classifier(decoder(x, tokens)), 1);
}

Tensor multitask_loss(const std::vector<Tensor>& heads, const std::vector<SegMap>& gt) {
  if (heads.empty()) throw std::invalid_argument("multitask_loss: no heads");
  const Shape& s = heads.front().shape();
  if (s.size() != 4 || s[1] != 2) throw std::invalid_argument("multitask_loss: head output must be [N,2,H,W]");
  const std::size_t n = s[0], h = s[2], w = s[3];
  if (gt.size() != n) throw std::invalid_argument("multitask_loss: batch of " + std::to_string(n) +
                                                  " outputs but " + std::to_string(gt.size()) + " label maps");
  for (const SegMap& m : gt) {
    if (m.height != h || m.width != w) throw std::invalid_argument("multitask_loss: label map extent mismatch");
    for (auto v : m.labels) {
      if (v == SegMap::kUnknown) throw std::invalid_argument("multitask_loss: UNKNOWN in ground truth");
    }
  }
  const double inv_pixels = 1.0 / static_cast<double>(n * h * w);
  Tensor total;
  for (std::size_t i = 0; i < heads.size(); ++i) {
    if (heads[i].shape() != s) throw std::invalid_argument("multitask_loss: head shapes differ");
    std::vector<double> target(n * 2 * h * w, 0.0);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t p = 0; p < h * w; ++p) {
        const std::size_t cls = gt[b].labels[p] == i ? 1 : 0;
        target[(b * 2 + cls) * h * w + p] = 1.0;
      }
    }
    const Tensor t = Tensor::from(s, std::move(target));
    const Tensor head_loss = scale(sum(heads[i] * t), -inv_pixels);
    total = total.defined() ? total + head_loss : head_loss;
  }
  return scale(total, 1.0 / static_cast<double>(heads.size()));
}

SegMap combine_heads(const std::vector<std::vector<double>>& probs, std::size_t height, std::size_t width,
                     double tau) {
  SegMap out(height, width, SegMap::kUnknown);
  for (const auto& p : probs) {
    if (p.size() != height * width) throw std::invalid_argument("combine_heads: raster size mismatch");
  }
  for (std::size_t px = 0; px < height * width; ++px) {
    double best = tau;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (probs[i][px] > best) {
        best = probs[i][px];
        out.labels[px] = static_cast<std::uint8_t>(i);
      }
    }
  }
  return out;
}

SegMap combine_heads(const std::vector<Tensor>& heads, std::size_t item, double tau) {
  if (heads.empty()) throw std::invalid_argument("combine_heads: no heads");
  const Shape& s = heads.front().shape();
  if (s.size() != 4 || s[1] != 2 || item >= s[0]) throw std::invalid_argument("combine_heads: bad head shape");
  const std::size_t h = s[2], w = s[3];
  std::vector<std::vector<double>> probs(heads.size(), std::vector<double>(h * w));
  for (std::size_t i = 0; i < heads.size(); ++i) {
    if (heads[i].shape() != s) throw std::invalid_argument("combine_heads: head shapes differ");
    const double* pos = heads[i].values().data() + (item * 2 + 1) * h * w;
    for (std::size_t p = 0; p < h * w; ++p) probs[i][p] = std::exp(pos[p]);
  }
  return combine_heads(probs, h, w, tau);
}

}  // namespace segfuse
