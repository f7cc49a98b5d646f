#include "segfuse/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "segfuse/rng.hpp"

namespace segfuse {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw std::invalid_argument("config: key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ',';
    if constexpr (std::is_floating_point_v<T>) {
      os << fmt(v[i]);
    } else {
      os << v[i];
    }
  }
  return os.str();
}

void apply_stages(const KeyValueConfig& kv, const std::string& prefix, std::vector<StageConfig>& stages) {
  std::vector<std::size_t> widths, depths, kernels, strides;
  std::vector<double> expansions;
  for (const auto& s : stages) {
    widths.push_back(s.width);
    depths.push_back(s.depth);
    kernels.push_back(s.kernel);
    strides.push_back(s.stride);
    expansions.push_back(s.expansion);
  }
  widths = kv.get_sizes(prefix + ".widths", widths);
  depths = kv.get_sizes(prefix + ".depths", depths);
  kernels = kv.get_sizes(prefix + ".kernels", kernels);
  strides = kv.get_sizes(prefix + ".strides", strides);
  expansions = kv.get_doubles(prefix + ".expansions", expansions);
  const std::size_t n = widths.size();
  if (depths.size() != n || kernels.size() != n || strides.size() != n || expansions.size() != n) {
    throw std::invalid_argument("config: " + prefix + " stage lists must have equal length");
  }
  stages.clear();
  for (std::size_t i = 0; i < n; ++i) stages.push_back({widths[i], depths[i], kernels[i], strides[i], expansions[i]});
}

void emit_stages(std::map<std::string, std::string>& out, const std::string& prefix,
                 const std::vector<StageConfig>& stages) {
  std::vector<std::size_t> widths, depths, kernels, strides;
  std::vector<double> expansions;
  for (const auto& s : stages) {
    widths.push_back(s.width);
    depths.push_back(s.depth);
    kernels.push_back(s.kernel);
    strides.push_back(s.stride);
    expansions.push_back(s.expansion);
  }
  out[prefix + ".widths"] = join(widths);
  out[prefix + ".depths"] = join(depths);
  out[prefix + ".kernels"] = join(kernels);
  out[prefix + ".strides"] = join(strides);
  out[prefix + ".expansions"] = join(expansions);
}

std::string render(const std::map<std::string, std::string>& kv) {
  std::ostringstream os;
  for (const auto& [k, v] : kv) os << k << '=' << v << '\n';
  return os.str();
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text) {
  KeyValueConfig cfg;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    cfg.values_[key] = trim(line.substr(eq + 1));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const std::string& KeyValueConfig::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::out_of_range("config: missing key " + key);
  used_[key] = true;
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  return has(key) ? raw(key) : fallback;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  return has(key) ? parse_double(key, raw(key)) : fallback;
}

std::size_t KeyValueConfig::get_size(const std::string& key, std::size_t fallback) const {
  return has(key) ? parse_size(key, raw(key)) : fallback;
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = raw(key);
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw std::invalid_argument("config: key '" + key + "' expects an unsigned integer, got '" + v + "'");
  }
  return out;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = raw(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<std::size_t> KeyValueConfig::get_sizes(const std::string& key,
                                                   const std::vector<std::size_t>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<std::size_t> out;
  for (const auto& tok : split_list(raw(key))) out.push_back(parse_size(key, tok));
  return out;
}

std::vector<double> KeyValueConfig::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<double> out;
  for (const auto& tok : split_list(raw(key))) out.push_back(parse_double(key, tok));
  return out;
}

std::vector<std::string> KeyValueConfig::unused_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : values_) {
    if (!used_.count(k)) out.push_back(k);
  }
  return out;
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::tiny() {
  ModelConfig m;
  m.features = 16;
  m.unet.stem_width = 8;
  m.unet.stages = {{8, 1, 3, 1, 1.0}, {12, 1, 3, 2, 4.0}, {16, 1, 3, 2, 4.0}, {24, 1, 3, 2, 4.0}};
  m.unet.out_channels = 16;
  m.transformer.backbone.stem_width = 8;
  m.transformer.backbone.stages = {{8, 1, 3, 2, 1.0}, {12, 1, 3, 2, 4.0}, {16, 1, 3, 2, 4.0}};
  m.transformer.num_tokens = 6;
  m.transformer.token_dim = 16;
  m.transformer.attention = {1, 4, 2};
  m.head.num_tokens = 2;
  m.head.token_dim = 8;
  m.head.encoder = {1, 2, 2};
  m.head.decoder_heads = 2;
  return m;
}

void ModelConfig::validate() const {
  if (num_classes < 2 || num_classes >= SegMap::kUnknown) throw std::invalid_argument("model: bad class count");
  if (features == 0) throw std::invalid_argument("model: features must be positive");
  unet.validate();
  if (unet.out_channels != features) throw std::invalid_argument("model: unet.out_channels must equal features");
  if (use_transformer_path) {
    const auto& bb = transformer.backbone;
    if (bb.stages.empty()) throw std::invalid_argument("model: backbone needs stages");
    if (bb.stages.back().width != features) {
      throw std::invalid_argument("model: backbone output width must equal features");
    }
    if (transformer.token_dim % transformer.attention.heads != 0) {
      throw std::invalid_argument("model: token_dim not divisible by attention heads");
    }
    if (features % transformer.attention.heads != 0) {
      throw std::invalid_argument("model: features not divisible by attention heads");
    }
  }
  if (head.token_dim % head.encoder.heads != 0) throw std::invalid_argument("model: head token_dim vs heads");
  if (!head.channel_split && num_classes % head.decoder_heads != 0) {
    throw std::invalid_argument("model: class count not divisible by head decoder heads");
  }
}

std::size_t ModelConfig::input_multiple() const {
  std::size_t m = unet.total_stride();
  if (use_transformer_path) {
    std::size_t t = 1;
    for (const auto& s : transformer.backbone.stages) t *= s.stride;
    m = std::max(m, t);
  }
  return m;
}

void ModelConfig::apply(const KeyValueConfig& kv) {
  num_classes = kv.get_size("model.num_classes", num_classes);
  features = kv.get_size("model.features", features);
  norm.eps = kv.get_double("model.bn_eps", norm.eps);
  norm.momentum = kv.get_double("model.bn_momentum", norm.momentum);
  use_transformer_path = kv.get_bool("model.use_transformer_path", use_transformer_path);
  unet.se_ratio = kv.get_double("model.se_ratio", unet.se_ratio);
  unet.use_se = kv.get_bool("model.use_se", unet.use_se);
  transformer.backbone.se_ratio = unet.se_ratio;
  transformer.backbone.use_se = unet.use_se;
  unet.stem_width = kv.get_size("model.unet.stem_width", unet.stem_width);
  apply_stages(kv, "model.unet", unet.stages);
  unet.skip_stages = kv.get_sizes("model.unet.skips", unet.skip_stages);
  unet.out_channels = features;
  transformer.backbone.stem_width = kv.get_size("model.backbone.stem_width", transformer.backbone.stem_width);
  apply_stages(kv, "model.backbone", transformer.backbone.stages);
  transformer.num_tokens = kv.get_size("model.tokens", transformer.num_tokens);
  transformer.token_dim = kv.get_size("model.token_dim", transformer.token_dim);
  transformer.attention.layers = kv.get_size("model.layers", transformer.attention.layers);
  transformer.attention.heads = kv.get_size("model.heads", transformer.attention.heads);
  transformer.attention.ff_multiplier = kv.get_size("model.ff_multiplier", transformer.attention.ff_multiplier);
  head.num_tokens = kv.get_size("model.head.tokens", head.num_tokens);
  head.token_dim = kv.get_size("model.head.token_dim", head.token_dim);
  head.encoder.layers = kv.get_size("model.head.layers", head.encoder.layers);
  head.encoder.heads = kv.get_size("model.head.heads", head.encoder.heads);
  head.encoder.ff_multiplier = kv.get_size("model.head.ff_multiplier", head.encoder.ff_multiplier);
  head.decoder_heads = kv.get_size("model.head.decoder_heads", head.decoder_heads);
  head.channel_split = kv.get_bool("model.head.channel_split", head.channel_split);
}

std::string ModelConfig::to_text() const {
  std::map<std::string, std::string> kv;
  kv["model.num_classes"] = std::to_string(num_classes);
  kv["model.features"] = std::to_string(features);
  kv["model.bn_eps"] = fmt(norm.eps);
  kv["model.bn_momentum"] = fmt(norm.momentum);
  kv["model.use_transformer_path"] = use_transformer_path ? "true" : "false";
  kv["model.se_ratio"] = fmt(unet.se_ratio);
  kv["model.use_se"] = unet.use_se ? "true" : "false";
  kv["model.unet.stem_width"] = std::to_string(unet.stem_width);
  emit_stages(kv, "model.unet", unet.stages);
  kv["model.unet.skips"] = join(unet.skip_stages);
  kv["model.backbone.stem_width"] = std::to_string(transformer.backbone.stem_width);
  emit_stages(kv, "model.backbone", transformer.backbone.stages);
  kv["model.tokens"] = std::to_string(transformer.num_tokens);
  kv["model.token_dim"] = std::to_string(transformer.token_dim);
  kv["model.layers"] = std::to_string(transformer.attention.layers);
  kv["model.heads"] = std::to_string(transformer.attention.heads);
  kv["model.ff_multiplier"] = std::to_string(transformer.attention.ff_multiplier);
  kv["model.head.tokens"] = std::to_string(head.num_tokens);
  kv["model.head.token_dim"] = std::to_string(head.token_dim);
  kv["model.head.layers"] = std::to_string(head.encoder.layers);
  kv["model.head.heads"] = std::to_string(head.encoder.heads);
  kv["model.head.ff_multiplier"] = std::to_string(head.encoder.ff_multiplier);
  kv["model.head.decoder_heads"] = std::to_string(head.decoder_heads);
  kv["model.head.channel_split"] = head.channel_split ? "true" : "false";
  return render(kv);
}

std::uint64_t ModelConfig::hash() const { return fnv1a64(to_text()); }

TrainConfig TrainConfig::paper() { return TrainConfig{}; }

TrainConfig TrainConfig::desk() {
  TrainConfig t;
  t.batch_size = 4;
  t.epochs = 30;
  t.lr_drop_epochs = {20, 25};
  t.patch = 64;
  t.stride = 16;
  return t;
}

void TrainConfig::validate() const {
  if (!(base_lr > 0.0) || !(momentum >= 0.0) || !(weight_decay >= 0.0)) {
    throw std::invalid_argument("train: rates must be positive (momentum/decay non-negative)");
  }
  if (batch_size == 0 || epochs == 0) throw std::invalid_argument("train: batch_size and epochs must be positive");
  for (std::size_t i = 0; i < lr_drop_epochs.size(); ++i) {
    if (lr_drop_epochs[i] >= epochs) throw std::invalid_argument("train: lr drop epoch beyond training length");
    if (i > 0 && lr_drop_epochs[i] <= lr_drop_epochs[i - 1]) {
      throw std::invalid_argument("train: lr_drop_epochs must be strictly increasing");
    }
  }
  if (patch == 0 || stride == 0) throw std::invalid_argument("train: patch and stride must be positive");
  if (patch % model.input_multiple() != 0) {
    throw std::invalid_argument("train: patch must be a multiple of " + std::to_string(model.input_multiple()));
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw std::invalid_argument("train: train_fraction in (0,1)");
  model.validate();
}

void TrainConfig::apply(const KeyValueConfig& kv) {
  base_lr = kv.get_double("base_lr", base_lr);
  momentum = kv.get_double("momentum", momentum);
  weight_decay = kv.get_double("weight_decay", weight_decay);
  batch_size = kv.get_size("batch_size", batch_size);
  epochs = kv.get_size("epochs", epochs);
  lr_drop_epochs = kv.get_sizes("lr_drop_epochs", lr_drop_epochs);
  seed = kv.get_u64("seed", seed);
  patch = kv.get_size("patch", patch);
  stride = kv.get_size("stride", stride);
  train_fraction = kv.get_double("train_fraction", train_fraction);
  checkpoint_every = kv.get_size("checkpoint_every", checkpoint_every);
  model.apply(kv);
}

std::string TrainConfig::to_text() const {
  std::map<std::string, std::string> kv;
  kv["base_lr"] = fmt(base_lr);
  kv["momentum"] = fmt(momentum);
  kv["weight_decay"] = fmt(weight_decay);
  kv["batch_size"] = std::to_string(batch_size);
  kv["epochs"] = std::to_string(epochs);
  kv["lr_drop_epochs"] = join(lr_drop_epochs);
  kv["seed"] = std::to_string(seed);
  kv["patch"] = std::to_string(patch);
  kv["stride"] = std::to_string(stride);
  kv["train_fraction"] = fmt(train_fraction);
  kv["checkpoint_every"] = std::to_string(checkpoint_every);
  return render(kv) + model.to_text();
}

}  // namespace segfuse
