#include "segfuse/transformer.hpp"

#include <cmath>
#include <stdexcept>

namespace segfuse {

Tokenizer::Tokenizer(const ParamBuilder& pb, std::size_t c, std::size_t num_tokens, std::size_t token_dim)
    : channels(c),
      attention_proj(pb.child("w1"), c, num_tokens, 1),
      feature_proj(pb.child("w2"), c, token_dim, 1) {}

TokenizerOutput Tokenizer::forward(const Tensor& x) const {
  require_channels(x, channels, "Tokenizer");
  const std::size_t n = x.size(0);
  const std::size_t hw = x.size(2) * x.size(3);
  const std::size_t na = attention_proj.weight.size(0);
  const std::size_t nf = feature_proj.weight.size(0);
  TokenizerOutput out;
  out.attention = softmax(reshape(attention_proj(x), {n, na, hw}), 2);
  out.features = softmax(reshape(feature_proj(x), {n, nf, hw}), 2);
  out.tokens = matmul(out.attention, permute(out.features, {0, 2, 1}));
  return out;
}

MultiHeadAttention::MultiHeadAttention(const ParamBuilder& pb, std::size_t dm, std::size_t dkv, std::size_t h)
    : d_model(dm), d_kv(dkv), heads(h) {
  if (h == 0 || dm % h != 0) {
    throw std::invalid_argument("attention: width " + std::to_string(dm) + " not divisible by " +
                                std::to_string(h) + " heads");
  }
  wq = Linear(pb.child("wq"), dm, dm, false);
  wk = Linear(pb.child("wk"), dkv, dm, false);
  wv = Linear(pb.child("wv"), dkv, dm, false);
  wo = Linear(pb.child("wo"), dm, dm, false);
}

namespace {

// [N,S,d] -> [N,h,S,d/h]
Tensor split_heads(const Tensor& x, std::size_t heads) {
  const std::size_t n = x.size(0), s = x.size(1), d = x.size(2);
  return permute(reshape(x, {n, s, heads, d / heads}), {0, 2, 1, 3});
}

}  // namespace

AttentionOutput MultiHeadAttention::forward(const Tensor& query, const Tensor& context) const {
  if (query.dim() != 3 || query.size(2) != d_model) {
    throw std::invalid_argument("attention: query " + shape_str(query.shape()) + " expected width " +
                                std::to_string(d_model));
  }
  if (context.dim() != 3 || context.size(2) != d_kv || context.size(0) != query.size(0)) {
    throw std::invalid_argument("attention: context " + shape_str(context.shape()) + " expected width " +
                                std::to_string(d_kv));
  }
  const std::size_t n = query.size(0), sq = query.size(1);
  const std::size_t head_dim = d_model / heads;
  const Tensor q = split_heads(wq(query), heads);
  const Tensor k = split_heads(wk(context), heads);
  const Tensor v = split_heads(wv(context), heads);
  const Tensor scores = scale(matmul(q, permute(k, {0, 1, 3, 2})), 1.0 / std::sqrt(static_cast<double>(head_dim)));
  AttentionOutput out;
  out.weights = softmax(scores, 3);
  const Tensor merged = reshape(permute(matmul(out.weights, v), {0, 2, 1, 3}), {n, sq, d_model});
  out.output = wo(merged);
  return out;
}

FeedForward::FeedForward(const ParamBuilder& pb, std::size_t dim, std::size_t hidden)
    : in(pb.child("fc1"), dim, hidden), out(pb.child("fc2"), hidden, dim) {}

EncoderLayer::EncoderLayer(const ParamBuilder& pb, std::size_t dim, const AttentionConfig& cfg)
    : norm1(pb.child("ln1"), dim),
      attn(pb.child("msa"), dim, dim, cfg.heads),
      norm2(pb.child("ln2"), dim),
      ff(pb.child("ff"), dim, dim * cfg.ff_multiplier) {}

Tensor EncoderLayer::operator()(const Tensor& x) const {
  const Tensor normed = norm1(x);
  Tensor h = x + attn(normed, normed);
  return h + ff(norm2(h));
}

TransformerEncoder::TransformerEncoder(const ParamBuilder& pb, std::size_t d, const AttentionConfig& cfg) : dim(d) {
  for (std::size_t l = 0; l < cfg.layers; ++l) layers.emplace_back(pb.child("layer" + std::to_string(l)), d, cfg);
}

Tensor TransformerEncoder::operator()(const Tensor& tokens) const {
  if (tokens.dim() != 3 || tokens.size(2) != dim) {
    throw std::invalid_argument("encoder: tokens " + shape_str(tokens.shape()) + " expected width " +
                                std::to_string(dim));
  }
  Tensor x = tokens;
  for (const auto& layer : layers) x = layer(x);
  return x;
}

DecoderLayer::DecoderLayer(const ParamBuilder& pb, std::size_t query_dim, std::size_t token_dim,
                           const AttentionConfig& cfg)
    : norm1(pb.child("ln1"), query_dim),
      attn(pb.child("mca"), query_dim, token_dim, cfg.heads),
      norm2(pb.child("ln2"), query_dim),
      ff(pb.child("ff"), query_dim, query_dim * cfg.ff_multiplier) {}

Tensor DecoderLayer::operator()(const Tensor& query, const Tensor& tokens) const {
  Tensor h = query + attn(norm1(query), tokens);
  return h + ff(norm2(h));
}

TransformerDecoder::TransformerDecoder(const ParamBuilder& pb, std::size_t c, std::size_t td,
                                       const AttentionConfig& cfg)
    : channels(c), token_dim(td) {
  for (std::size_t l = 0; l < cfg.layers; ++l) layers.emplace_back(pb.child("layer" + std::to_string(l)), c, td, cfg);
}

Tensor pixels_to_sequence(const Tensor& x) {
  const std::size_t n = x.size(0), c = x.size(1), hw = x.size(2) * x.size(3);
  return permute(reshape(x, {n, c, hw}), {0, 2, 1});
}

Tensor sequence_to_pixels(const Tensor& seq, std::size_t height, std::size_t width) {
  const std::size_t n = seq.size(0), c = seq.size(2);
  return reshape(permute(seq, {0, 2, 1}), {n, c, height, width});
}

Tensor TransformerDecoder::operator()(const Tensor& features, const Tensor& tokens) const {
  require_channels(features, channels, "decoder");
  if (tokens.dim() != 3 || tokens.size(2) != token_dim || tokens.size(0) != features.size(0)) {
    throw std::invalid_argument("decoder: tokens " + shape_str(tokens.shape()) + " expected width " +
                                std::to_string(token_dim));
  }
  Tensor q = pixels_to_sequence(features);
  for (const auto& layer : layers) q = layer(q, tokens);
  return sequence_to_pixels(q, features.size(2), features.size(3));
}

MBConvStage::MBConvStage(const ParamBuilder& pb, std::size_t in_channels, const StageConfig& cfg, double se_ratio,
                         bool use_se, NormConfig norm) {
  if (cfg.depth == 0) throw std::invalid_argument("stage depth must be positive");
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    BlockSpec spec;
    spec.in_channels = b == 0 ? in_channels : cfg.width;
    spec.out_channels = cfg.width;
    spec.kernel = cfg.kernel;
    spec.stride = b == 0 ? cfg.stride : 1;
    spec.expansion_ratio = cfg.expansion;
    spec.se_ratio = se_ratio;
    spec.use_se = use_se;
    blocks.emplace_back(pb.child("block" + std::to_string(b)), spec, norm);
  }
}

Tensor MBConvStage::operator()(const Tensor& x, bool training) {
  Tensor h = x;
  for (auto& block : blocks) h = block(h, training);
  return h;
}

Backbone::Backbone(const ParamBuilder& pb, std::size_t in_channels, const BackboneConfig& cfg, NormConfig norm)
    : stem(pb.child("stem"), in_channels, cfg.stem_width, 3, {1, 1, 1}, Activation::kSwish, norm), config(cfg) {
  if (cfg.stages.empty()) throw std::invalid_argument("backbone needs at least one stage");
  std::size_t width = cfg.stem_width;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    stages.emplace_back(pb.child("stage" + std::to_string(s)), width, cfg.stages[s], cfg.se_ratio, cfg.use_se, norm);
    width = cfg.stages[s].width;
  }
}

std::size_t Backbone::total_stride() const {
  std::size_t s = 1;
  for (const auto& st : config.stages) s *= st.stride;
  return s;
}

std::size_t Backbone::out_channels() const { return config.stages.back().width; }

Tensor Backbone::operator()(const Tensor& x, bool training) {
  const std::size_t stride = total_stride();
  if (x.dim() != 4 || x.size(2) % stride != 0 || x.size(3) % stride != 0) {
    throw std::invalid_argument("backbone: spatial extents of " + shape_str(x.shape()) +
                                " must be divisible by total stride " + std::to_string(stride));
  }
  Tensor h = stem(x, training);
  for (auto& stage : stages) h = stage(h, training);
  return h;
}

TransformerPath::TransformerPath(const ParamBuilder& pb, std::size_t in_channels, const TransformerPathConfig& cfg,
                                 NormConfig norm)
    : backbone(pb.child("backbone"), in_channels, cfg.backbone, norm),
      tokenizer(pb.child("tokenizer"), backbone.out_channels(), cfg.num_tokens, cfg.token_dim),
      encoder(pb.child("encoder"), cfg.token_dim, cfg.attention),
      decoder(pb.child("decoder"), backbone.out_channels(), cfg.token_dim, cfg.attention) {}

Tensor TransformerPath::operator()(const Tensor& x, bool training) {
  const Tensor features = backbone(x, training);
  const Tensor tokens = encoder(tokenizer(features));
  const Tensor decoded = decoder(features, tokens);
  const std::size_t factor = backbone.total_stride();
  return factor == 1 ? decoded : upsample_nearest(decoded, factor);
}

}  // namespace segfuse
