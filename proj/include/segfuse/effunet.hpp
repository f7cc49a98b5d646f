#pragma once

#include <vector>

#include "segfuse/transformer.hpp"

namespace segfuse {

/// Encoder layout of the local path. Each stage is one MBConv stage; the
/// first block of a stage carries its stride. skip_stages lists the stages
/// whose outputs feed decoder concatenations, shallow to deep.
struct UNetConfig {
  std::size_t stem_width = 16;
  std::vector<StageConfig> stages{
      {16, 1, 3, 1, 1.0}, {24, 2, 3, 2, 6.0}, {40, 2, 5, 2, 6.0}, {80, 3, 3, 2, 6.0}};
  std::vector<std::size_t> skip_stages{0, 1, 2};
  std::size_t out_channels = 32;
  double se_ratio = 0.25;
  bool use_se = true;

  /// Downsampling factor of the stem plus stages [0..stage].
  std::size_t stage_factor(std::size_t stage) const;
  std::size_t total_stride() const { return stage_factor(stages.size() - 1); }
  void validate() const;
};

struct EncoderOutput {
  Tensor bottleneck;
  std::vector<Tensor> skips;  // shallow -> deep
};

/// One decoder level: 2x2 stride-2 transposed conv halving channels, optional
/// skip concat, DoubleConv.
struct UpLevel {
  UpLevel() = default;
  UpLevel(const ParamBuilder& pb, std::size_t in_channels, std::size_t skip_channels, std::size_t out_channels,
          NormConfig norm);
  Tensor operator()(const Tensor& x, const Tensor* skip, bool training);

  std::size_t in_channels = 0;
  std::size_t up_channels = 0;
  std::size_t skip_channels = 0;
  Tensor up_weight;  // [in, in/2, 2, 2]
  Tensor up_bias;
  DoubleConv conv;
};

class EffUNet {
 public:
  EffUNet() = default;
  EffUNet(const ParamBuilder& pb, std::size_t in_channels, const UNetConfig& cfg, NormConfig norm);

  EncoderOutput encode(const Tensor& x, bool training);
  Tensor decode(const Tensor& bottleneck, const std::vector<Tensor>& skips, bool training);
  Tensor operator()(const Tensor& x, bool training) {
    EncoderOutput enc = encode(x, training);
    return decode(enc.bottleneck, enc.skips, training);
  }

  const UNetConfig& config() const { return cfg_; }
  const std::vector<UpLevel>& levels() const { return levels_; }

 private:
  UNetConfig cfg_;
  ConvBnAct stem_;
  std::vector<MBConvStage> stages_;
  std::vector<UpLevel> levels_;               // deepest first
  std::vector<std::ptrdiff_t> level_skip_;    // index into skips, or -1
};

}  // namespace segfuse
