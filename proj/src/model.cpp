#include "segfuse/model.hpp"

#include <stdexcept>

namespace segfuse {

SegModel::SegModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  const ParamBuilder root(params_, buffers_, seed);
  input_fusion_ = InputFusion(root.child("fusion"), cfg_.norm);
  if (cfg_.use_transformer_path) tpath_.emplace(root.child("tpath"), 3, cfg_.transformer, cfg_.norm);
  effunet_ = EffUNet(root.child("effunet"), 3, cfg_.unet, cfg_.norm);
  path_fusion_ = PathFusion(root.child("outfuse"), cfg_.features, cfg_.num_classes, cfg_.norm);
  for (std::size_t i = 0; i < cfg_.num_classes; ++i) {
    heads_.emplace_back(root.child("heads").child(std::to_string(i)), i, cfg_.num_classes, cfg_.head);
  }
}

ModelOutput SegModel::forward(const Tensor& image, const Tensor& dsm, bool training) {
  const std::size_t multiple = cfg_.input_multiple();
  if (image.dim() != 4 || image.size(2) % multiple != 0 || image.size(3) % multiple != 0) {
    throw std::invalid_argument("model: input " + shape_str(image.shape()) + " must have extents divisible by " +
                                std::to_string(multiple));
  }
  ModelOutput out;
  out.fused = input_fusion_(image, dsm, training);
  if (tpath_) out.global = (*tpath_)(out.fused, training);
  out.local = effunet_(out.fused, training);
  out.class_features = path_fusion_(out.global, out.local, training);
  out.head_log_probs.reserve(heads_.size());
  for (const auto& head : heads_) out.head_log_probs.push_back(head(out.class_features));
  return out;
}

}  // namespace segfuse
