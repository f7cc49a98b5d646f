#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "segfuse/config.hpp"
#include "segfuse/effunet.hpp"
#include "segfuse/fusion.hpp"
#include "segfuse/transformer.hpp"

namespace segfuse {

struct ModelOutput {
  Tensor fused;                   // [N,3,H,W] after input fusion
  Tensor global;                  // [N,F,H,W] transformer path (undefined when disabled)
  Tensor local;                   // [N,F,H,W] EfficientUNet path
  Tensor class_features;          // [N,num_classes,H,W]
  std::vector<Tensor> head_log_probs;  // num_classes x [N,2,H,W]
};

/// Full network: input fusion -> (transformer path, EfficientUNet) ->
/// path fusion -> per-class binary heads.
///
/// Parameter paths: "fusion.*", "tpath.*", "effunet.enc.*", "effunet.dec.*",
/// "outfuse.*", "heads.<i>.*". BN running statistics live in buffers().
/// The model is not copyable; layers share tensors with the stores.
class SegModel {
 public:
  SegModel(const ModelConfig& cfg, std::uint64_t seed);
  SegModel(const SegModel&) = delete;
  SegModel& operator=(const SegModel&) = delete;

  ModelOutput forward(const Tensor& image, const Tensor& dsm, bool training);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  ParamStore& buffers() { return buffers_; }
  const ParamStore& buffers() const { return buffers_; }

  InputFusion& input_fusion() { return input_fusion_; }
  EffUNet& effunet() { return effunet_; }
  TransformerPath* transformer_path() { return tpath_ ? &*tpath_ : nullptr; }
  PathFusion& path_fusion() { return path_fusion_; }
  std::vector<ClassHead>& heads() { return heads_; }

 private:
  ModelConfig cfg_;
  ParamStore params_;
  ParamStore buffers_;
  InputFusion input_fusion_;
  std::optional<TransformerPath> tpath_;
  EffUNet effunet_;
  PathFusion path_fusion_;
  std::vector<ClassHead> heads_;
};

}  // namespace segfuse
