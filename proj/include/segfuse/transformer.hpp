#pragma once

#include <vector>

#include "segfuse/nn.hpp"

namespace segfuse {

struct AttentionConfig {
  std::size_t layers = 6;   // L_D
  std::size_t heads = 4;
  std::size_t ff_multiplier = 2;
};

struct TokenizerOutput {
  Tensor tokens;     // [N, N_a, N_f]
  Tensor attention;  // [N, N_a, HW], softmax over HW
  Tensor features;   // [N, N_f, HW], softmax over HW
};

/// Semantic tokenizer: two bias-free pointwise convolutions, each softmaxed
/// over the spatial axis, combined as tokens = A F^T.
struct Tokenizer {
  Tokenizer() = default;
  Tokenizer(const ParamBuilder& pb, std::size_t channels, std::size_t num_tokens, std::size_t token_dim);
  TokenizerOutput forward(const Tensor& x) const;
  Tensor operator()(const Tensor& x) const { return forward(x).tokens; }

  std::size_t channels = 0;
  Conv2d attention_proj;  // W1: C -> N_a
  Conv2d feature_proj;    // W2: C -> N_f
};

struct AttentionOutput {
  Tensor output;   // [N, Sq, d_model]
  Tensor weights;  // [N, heads, Sq, Sk], rows sum to 1
};

/// Multi-head attention with bias-free projections. Queries come from a
/// sequence of width d_model; keys and values from a sequence of width d_kv
/// projected to d_model. Self-attention is the d_kv == d_model case with the
/// same sequence on both sides.
struct MultiHeadAttention {
  MultiHeadAttention() = default;
  MultiHeadAttention(const ParamBuilder& pb, std::size_t d_model, std::size_t d_kv, std::size_t heads);
  AttentionOutput forward(const Tensor& query, const Tensor& context) const;
  Tensor operator()(const Tensor& query, const Tensor& context) const { return forward(query, context).output; }

  std::size_t d_model = 0;
  std::size_t d_kv = 0;
  std::size_t heads = 1;
  Linear wq, wk, wv, wo;
};

/// linear -> swish -> linear.
struct FeedForward {
  FeedForward() = default;
  FeedForward(const ParamBuilder& pb, std::size_t dim, std::size_t hidden);
  Tensor operator()(const Tensor& x) const { return out(swish(in(x))); }

  Linear in;
  Linear out;
};

/// Pre-norm layer: x += MSA(LN(x)); x += FF(LN(x)).
struct EncoderLayer {
  EncoderLayer() = default;
  EncoderLayer(const ParamBuilder& pb, std::size_t dim, const AttentionConfig& cfg);
  Tensor operator()(const Tensor& x) const;

  LayerNorm norm1;
  MultiHeadAttention attn;
  LayerNorm norm2;
  FeedForward ff;
};

struct TransformerEncoder {
  TransformerEncoder() = default;
  TransformerEncoder(const ParamBuilder& pb, std::size_t dim, const AttentionConfig& cfg);
  Tensor operator()(const Tensor& tokens) const;

  std::size_t dim = 0;
  std::vector<EncoderLayer> layers;
};

/// Pre-norm cross-attention layer over a query sequence:
/// q += MCA(LN(q), tokens); q += FF(LN(q)).
struct DecoderLayer {
  DecoderLayer() = default;
  DecoderLayer(const ParamBuilder& pb, std::size_t query_dim, std::size_t token_dim, const AttentionConfig& cfg);
  Tensor operator()(const Tensor& query, const Tensor& tokens) const;

  LayerNorm norm1;
  MultiHeadAttention attn;
  LayerNorm norm2;
  FeedForward ff;
};

/// Treats every pixel of an NCHW map as a query attending to the tokens.
struct TransformerDecoder {
  TransformerDecoder() = default;
  TransformerDecoder(const ParamBuilder& pb, std::size_t channels, std::size_t token_dim,
                     const AttentionConfig& cfg);
  Tensor operator()(const Tensor& features, const Tensor& tokens) const;

  std::size_t channels = 0;
  std::size_t token_dim = 0;
  std::vector<DecoderLayer> layers;
};

/// [N,C,H,W] -> [N,HW,C] and back.
Tensor pixels_to_sequence(const Tensor& x);
Tensor sequence_to_pixels(const Tensor& seq, std::size_t height, std::size_t width);

struct StageConfig {
  std::size_t width = 16;
  std::size_t depth = 1;
  std::size_t kernel = 3;
  std::size_t stride = 2;
  double expansion = 6.0;
};

struct MBConvStage {
  MBConvStage() = default;
  MBConvStage(const ParamBuilder& pb, std::size_t in_channels, const StageConfig& cfg, double se_ratio,
              bool use_se, NormConfig norm);
  Tensor operator()(const Tensor& x, bool training);

  std::vector<MBConv> blocks;
};

struct BackboneConfig {
  std::size_t stem_width = 16;
  std::vector<StageConfig> stages{{16, 1, 3, 2, 1.0}, {24, 1, 3, 2, 6.0}, {32, 1, 5, 2, 6.0}};
  double se_ratio = 0.25;
  bool use_se = true;
};

struct TransformerPathConfig {
  BackboneConfig backbone;
  std::size_t num_tokens = 6;   // N_a
  std::size_t token_dim = 32;   // N_f
  AttentionConfig attention;
};

/// Headless MBConv feature extractor: 3x3 stem (stride 1) then stages.
struct Backbone {
  Backbone() = default;
  Backbone(const ParamBuilder& pb, std::size_t in_channels, const BackboneConfig& cfg, NormConfig norm);
  Tensor operator()(const Tensor& x, bool training);
  std::size_t total_stride() const;
  std::size_t out_channels() const;

  ConvBnAct stem;
  std::vector<MBConvStage> stages;
  BackboneConfig config;
};

/// Global path: backbone -> tokenizer -> encoder -> decoder (queries are the
/// backbone features) -> nearest upsample back to input resolution.
struct TransformerPath {
  TransformerPath() = default;
  TransformerPath(const ParamBuilder& pb, std::size_t in_channels, const TransformerPathConfig& cfg,
                  NormConfig norm);
  Tensor operator()(const Tensor& x, bool training);
  std::size_t out_channels() const { return backbone.out_channels(); }

  Backbone backbone;
  Tokenizer tokenizer;
  TransformerEncoder encoder;
  TransformerDecoder decoder;
};

}  // namespace segfuse
