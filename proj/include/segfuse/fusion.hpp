#pragma once

#include <vector>

#include "segfuse/segmap.hpp"
#include "segfuse/transformer.hpp"

namespace segfuse {

/// Image + elevation input layer.
///   a = ReLU(BN(conv3x3(image))), b = ReLU(BN(conv3x3(dsm)))   (3 channels each)
///   out = BN(a * b) + image
struct InputFusion {
  InputFusion() = default;
  InputFusion(const ParamBuilder& pb, NormConfig norm);

  /// The BN(a * b) term alone, i.e. out - image.
  Tensor fused_term(const Tensor& image, const Tensor& dsm, bool training);
  Tensor operator()(const Tensor& image, const Tensor& dsm, bool training);

  ConvBnAct image_branch;
  ConvBnAct dsm_branch;
  BatchNorm2d fused_bn;
};

/// Sum of the two path outputs reduced to one channel per class.
struct PathFusion {
  PathFusion() = default;
  PathFusion(const ParamBuilder& pb, std::size_t channels, std::size_t num_classes, NormConfig norm);

  /// global may be undefined (transformer path disabled); then only local is used.
  Tensor operator()(const Tensor& global, const Tensor& local, bool training);

  std::size_t channels = 0;
  DoubleConv conv;
};

struct HeadConfig {
  std::size_t num_tokens = 2;
  std::size_t token_dim = 16;
  AttentionConfig encoder{6, 4, 2};
  std::size_t decoder_heads = 2;
  /// Head i reads only fused channel i instead of all of them.
  bool channel_split = false;
};

/// Binary "class i vs rest" head: tokenizer -> encoder -> pixel-query
/// decoder -> 1x1 conv to two logits -> log-softmax over the channel axis.
/// Channel 0 is "not class i", channel 1 is "class i".
struct ClassHead {
  ClassHead() = default;
  ClassHead(const ParamBuilder& pb, std::size_t class_id, std::size_t in_channels, const HeadConfig& cfg);
  Tensor operator()(const Tensor& features) const;

  std::size_t class_id = 0;
  std::size_t in_channels = 0;
  bool channel_split = false;
  Tokenizer tokenizer;
  TransformerEncoder encoder;
  TransformerDecoder decoder;
  Conv2d classifier;
};

/// Mean over heads of the per-head binary negative log-likelihood, each
/// averaged over every pixel of the batch. gt holds one dense map per batch
/// item.
Tensor multitask_loss(const std::vector<Tensor>& head_log_probs, const std::vector<SegMap>& gt);

/// Per-pixel decision: among heads whose positive probability exceeds tau,
/// the most confident wins (lowest id on ties); no candidate -> UNKNOWN.
/// positive_probs[i] is head i's H*W positive-probability raster.
SegMap combine_heads(const std::vector<std::vector<double>>& positive_probs, std::size_t height,
                     std::size_t width, double tau = 0.5);
/// Same rule applied to batch item `item` of log-probability head outputs.
SegMap combine_heads(const std::vector<Tensor>& head_log_probs, std::size_t item = 0, double tau = 0.5);

}  // namespace segfuse
