#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "segfuse/config.hpp"
#include "segfuse/data.hpp"
#include "segfuse/metrics.hpp"
#include "segfuse/model.hpp"
#include "segfuse/rng.hpp"

namespace segfuse {

/// Raised when training produces a non-finite loss.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// base_lr * 10^-(number of drop epochs <= epoch). Throws outside [0, epochs).
double lr_at(std::size_t epoch, const TrainConfig& cfg);

/// g' = g + weight_decay * p; v = momentum * v + g'; p -= lr * v.
void sgd_update(std::span<double> param, std::span<const double> grad, std::span<double> velocity, double lr,
                double momentum, double weight_decay);
/// Applies sgd_update to every parameter with its accumulated gradient
/// (parameters that received no gradient are treated as having zero grad).
void sgd_step(ParamStore& params, ParamStore& velocity, double lr, double momentum, double weight_decay);
/// Zero-filled store with the same paths and shapes as params.
ParamStore make_velocity(const ParamStore& params);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double train_accuracy = 0.0;  // pixel accuracy of the decision rule on training patches
  bool has_val = false;
  double val_oa = 0.0;
  double val_mean_f1 = 0.0;
  double val_kappa = 0.0;
  bool operator==(const EpochRecord&) const = default;
};

/// Header fields of a checkpoint file, readable without building a model.
struct CheckpointInfo {
  std::string config_text;  // TrainConfig::to_text()
  std::uint64_t model_hash = 0;
  std::size_t epoch = 0;  // completed epochs
  std::uint64_t rng_state = 0;
  NormStats stats;
  std::vector<EpochRecord> history;

  TrainConfig config() const;
};

/// Per-pixel decision from averaged head probabilities, followed by
/// inpainting. Falls back to the most confident head everywhere when no
/// pixel clears the threshold.
SegMap decide(const std::vector<std::vector<double>>& positive_probs, std::size_t height, std::size_t width);

/// Full-scene inference: covering windows at stride patch/2, per-head
/// positive probabilities averaged over overlaps, then decide().
SegMap predict(SegModel& model, const NormStats& stats, const Scene& scene, std::size_t patch);
/// predict() on every scene, scored with the 3-pixel boundary erosion.
EvalReport evaluate(SegModel& model, const NormStats& stats, const std::vector<Scene>& scenes, std::size_t patch);
/// Most frequent training class predicted everywhere, scored like evaluate().
EvalReport majority_baseline(const std::vector<Scene>& train, const std::vector<Scene>& scenes);
/// Scores given predictions against scene labels with boundary erosion.
EvalReport score(const std::vector<Scene>& scenes, const std::vector<SegMap>& predictions);
/// Fraction of all pixels (no erosion) where prediction equals the label.
double pixel_accuracy(const std::vector<Scene>& scenes, const std::vector<SegMap>& predictions);

/// SGD training over sliding-window patches of the training scenes.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, std::vector<Scene> train, std::vector<Scene> val);

  const TrainConfig& config() const { return cfg_; }
  SegModel& model() { return *model_; }
  const NormStats& stats() const { return stats_; }
  std::size_t epoch() const { return epoch_; }
  std::size_t patch_count() const { return patches_.size(); }
  const std::vector<EpochRecord>& history() const { return history_; }
  const std::vector<Scene>& train_scenes() const { return train_; }
  const std::vector<Scene>& val_scenes() const { return val_; }

  /// One pass over the shuffled patches. Throws NumericalError on divergence.
  EpochRecord run_epoch();
  /// Runs epochs until `until` have completed (default: cfg.epochs).
  void train(std::size_t until = 0, const std::function<void(const EpochRecord&)>& on_epoch = {});

  /// Atomic write (temp file + rename).
  void save_checkpoint(const std::filesystem::path& path) const;
  /// Restores parameters, optimizer state, epoch, shuffle state and history.
  /// Throws on a model-config mismatch or different normalization statistics.
  void load_checkpoint(const std::filesystem::path& path);

 private:
  TrainConfig cfg_;
  std::vector<Scene> train_;  // normalized
  std::vector<Scene> val_;    // normalized
  NormStats stats_;
  std::vector<Patch> patches_;
  std::unique_ptr<SegModel> model_;
  ParamStore velocity_;
  SplitMix64 rng_;
  std::size_t epoch_ = 0;
  std::vector<EpochRecord> history_;
};

/// Reads only the checkpoint header.
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

/// A model restored from a checkpoint for inference.
struct LoadedModel {
  CheckpointInfo info;
  std::unique_ptr<SegModel> model;
};
/// Rebuilds the model from the stored configuration. When `expected` is
/// given its hash must match the stored one.
LoadedModel load_model(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

/// "epoch,lr,loss,train_accuracy,val_oa,val_mean_f1,val_kappa" rows.
std::string format_history_csv(const std::vector<EpochRecord>& history);

}  // namespace segfuse
