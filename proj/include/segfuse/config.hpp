#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "segfuse/effunet.hpp"
#include "segfuse/fusion.hpp"
#include "segfuse/transformer.hpp"

namespace segfuse {

/// Flat "key = value" text. '#' starts a comment; blank lines are ignored.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text);
  static KeyValueConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& raw(const std::string& key) const;
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::size_t> get_sizes(const std::string& key, const std::vector<std::size_t>& fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;

  /// Keys never read through a getter; used to reject typos.
  std::vector<std::string> unused_keys() const;
  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  mutable std::map<std::string, bool> used_;
};

/// Every architecture hyperparameter of the segmentation model.
struct ModelConfig {
  std::size_t num_classes = kNumClasses;
  std::size_t features = 32;  // width of both path outputs
  NormConfig norm;
  bool use_transformer_path = true;
  UNetConfig unet;
  TransformerPathConfig transformer;
  HeadConfig head;

  /// Desk-scale default widths (see README); paper constants for tokens/layers.
  static ModelConfig desk();
  /// Small widths and one attention layer, used by training smoke tests.
  static ModelConfig tiny();

  void validate() const;
  /// Largest divisor every input extent must satisfy.
  std::size_t input_multiple() const;

  void apply(const KeyValueConfig& kv);
  /// Canonical key=value text, one key per line, sorted.
  std::string to_text() const;
  std::uint64_t hash() const;
};

struct TrainConfig {
  double base_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::size_t batch_size = 10;
  std::size_t epochs = 100;
  std::vector<std::size_t> lr_drop_epochs{25, 45};
  std::uint64_t seed = 0;
  std::size_t patch = 256;
  std::size_t stride = 32;
  double train_fraction = 0.75;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  ModelConfig model;

  /// The published recipe: 256 px patches, stride 32, batch 10, 100 epochs.
  static TrainConfig paper();
  /// Desk-scale defaults: 64 px patches, stride 16, batch 4, 30 epochs.
  static TrainConfig desk();

  void validate() const;
  void apply(const KeyValueConfig& kv);
  std::string to_text() const;
};

}  // namespace segfuse
