#include "segfuse/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "segfuse/fmm.hpp"
#include "segfuse/ops.hpp"

namespace segfuse {

namespace {

constexpr const char* kCheckpointMagic = "SCKP1";
constexpr std::uint64_t kShuffleSalt = 0x53485546464C45ULL;

std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_hex(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw std::runtime_error("checkpoint: bad number '" + s + "'");
  return v;
}

std::string expect_field(std::istream& in, const std::string& key) {
  std::string line;
  if (!std::getline(in, line) || line.rfind(key + "=", 0) != 0) {
    throw std::runtime_error("checkpoint: expected field '" + key + "'");
  }
  return line.substr(key.size() + 1);
}

void expect_line(std::istream& in, const std::string& want) {
  std::string line;
  if (!std::getline(in, line) || line != want) throw std::runtime_error("checkpoint: expected '" + want + "'");
}

std::uint64_t parse_u64(const std::string& s) {
  std::size_t pos = 0;
  const auto v = std::stoull(s, &pos);
  if (pos != s.size()) throw std::runtime_error("checkpoint: bad integer '" + s + "'");
  return v;
}

CheckpointInfo read_header(std::istream& in) {
  CheckpointInfo info;
  expect_line(in, kCheckpointMagic);
  const std::size_t bytes = parse_u64(expect_field(in, "config_bytes"));
  info.config_text.resize(bytes);
  in.read(info.config_text.data(), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes) throw std::runtime_error("checkpoint: truncated config");
  info.model_hash = parse_u64(expect_field(in, "model_hash"));
  info.epoch = parse_u64(expect_field(in, "epoch"));
  info.rng_state = parse_u64(expect_field(in, "rng_state"));
  std::istringstream norm(expect_field(in, "norm"));
  std::string a, b, c;
  norm >> a >> b >> c;
  info.stats = {parse_hex(a), parse_hex(b), parse_hex(c)};
  const std::size_t n = parse_u64(expect_field(in, "history"));
  for (std::size_t i = 0; i < n; ++i) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("checkpoint: truncated history");
    std::istringstream row(line);
    std::string f[8];
    for (auto& s : f) row >> s;
    EpochRecord r;
    r.epoch = parse_u64(f[0]);
    r.lr = parse_hex(f[1]);
    r.loss = parse_hex(f[2]);
    r.train_accuracy = parse_hex(f[3]);
    r.has_val = f[4] == "1";
    r.val_oa = parse_hex(f[5]);
    r.val_mean_f1 = parse_hex(f[6]);
    r.val_kappa = parse_hex(f[7]);
    info.history.push_back(r);
  }
  return info;
}

void write_header(std::ostream& out, const CheckpointInfo& info) {
  out << kCheckpointMagic << '\n'
      << "config_bytes=" << info.config_text.size() << '\n'
      << info.config_text << "model_hash=" << info.model_hash << '\n'
      << "epoch=" << info.epoch << '\n'
      << "rng_state=" << info.rng_state << '\n'
      << "norm=" << hex(info.stats.image_max) << ' ' << hex(info.stats.dsm_mean) << ' ' << hex(info.stats.dsm_std)
      << '\n'
      << "history=" << info.history.size() << '\n';
  for (const auto& r : info.history) {
    out << r.epoch << ' ' << hex(r.lr) << ' ' << hex(r.loss) << ' ' << hex(r.train_accuracy) << ' '
        << (r.has_val ? 1 : 0) << ' ' << hex(r.val_oa) << ' ' << hex(r.val_mean_f1) << ' ' << hex(r.val_kappa)
        << '\n';
  }
}

std::vector<std::vector<double>> positive_probs(const std::vector<Tensor>& head_log_probs, std::size_t item) {
  std::vector<std::vector<double>> out;
  for (const auto& lp : head_log_probs) {
    const std::size_t plane = lp.size(2) * lp.size(3);
    const double* pos = lp.data().data() + (item * 2 + 1) * plane;
    std::vector<double> p(plane);
    for (std::size_t i = 0; i < plane; ++i) p[i] = std::exp(pos[i]);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  if (epoch >= cfg.epochs) {
    throw std::out_of_range("lr_at: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) +
                            ")");
  }
  double lr = cfg.base_lr;
  for (std::size_t d : cfg.lr_drop_epochs) {
    if (d <= epoch) lr /= 10.0;
  }
  return lr;
}

void sgd_update(std::span<double> param, std::span<const double> grad, std::span<double> velocity, double lr,
                double momentum, double weight_decay) {
  if (grad.size() != param.size() || velocity.size() != param.size()) {
    throw std::invalid_argument("sgd_update: parameter, gradient and velocity sizes differ");
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i] + weight_decay * param[i];
    velocity[i] = momentum * velocity[i] + g;
    param[i] -= lr * velocity[i];
  }
}

void sgd_step(ParamStore& params, ParamStore& velocity, double lr, double momentum, double weight_decay) {
  if (velocity.size() != params.size()) throw std::invalid_argument("sgd_step: velocity store does not match params");
  for (auto& [path, p] : params) {
    Tensor& v = velocity.get(path);
    if (v.shape() != p.shape()) throw std::invalid_argument("sgd_step: velocity shape mismatch at " + path);
    if (p.has_grad()) {
      sgd_update(p.mutable_data(), p.grad(), v.mutable_data(), lr, momentum, weight_decay);
    } else {
      const std::vector<double> zero(p.numel(), 0.0);
      sgd_update(p.mutable_data(), zero, v.mutable_data(), lr, momentum, weight_decay);
    }
  }
}

ParamStore make_velocity(const ParamStore& params) {
  ParamStore v;
  for (const auto& [path, p] : params) v.add(path, Tensor::zeros(p.shape()));
  return v;
}

TrainConfig CheckpointInfo::config() const {
  TrainConfig cfg;
  cfg.apply(KeyValueConfig::parse(config_text));
  return cfg;
}

SegMap decide(const std::vector<std::vector<double>>& probs, std::size_t height, std::size_t width) {
  SegMap combined = combine_heads(probs, height, width);
  bool any = false;
  for (auto v : combined.labels) any = any || v != SegMap::kUnknown;
  if (any) return inpaint(combined);
  for (std::size_t p = 0; p < combined.size(); ++p) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < probs.size(); ++k) {
      if (probs[k][p] > probs[best][p]) best = k;
    }
    combined.labels[p] = static_cast<std::uint8_t>(best);
  }
  return combined;
}

SegMap predict(SegModel& model, const NormStats& stats, const Scene& raw, std::size_t patch) {
  const Scene scene = normalize(raw, stats);
  scene.validate();
  const std::size_t H = scene.height(), W = scene.width(), k = model.config().num_classes;
  const std::size_t step = std::max<std::size_t>(1, patch / 2);
  const auto rows = covering_origins(H, patch, step);
  const auto cols = covering_origins(W, patch, step);
  std::vector<std::vector<double>> sums(k, std::vector<double>(H * W, 0.0));
  std::vector<double> hits(H * W, 0.0);
  NoGradGuard no_grad;
  for (std::size_t r0 : rows) {
    for (std::size_t c0 : cols) {
      const Scene window = crop(scene, r0, c0, patch, patch);
      const Batch batch = make_batch({&window});
      const ModelOutput out = model.forward(batch.image, batch.dsm, false);
      const auto probs = positive_probs(out.head_log_probs, 0);
      for (std::size_t r = 0; r < patch; ++r) {
        for (std::size_t c = 0; c < patch; ++c) {
          const std::size_t dst = (r0 + r) * W + c0 + c;
          for (std::size_t h = 0; h < k; ++h) sums[h][dst] += probs[h][r * patch + c];
          hits[dst] += 1.0;
        }
      }
    }
  }
  for (auto& plane : sums) {
    for (std::size_t p = 0; p < plane.size(); ++p) plane[p] /= hits[p];
  }
  return decide(sums, H, W);
}

EvalReport score(const std::vector<Scene>& scenes, const std::vector<SegMap>& predictions) {
  if (scenes.size() != predictions.size()) throw std::invalid_argument("score: one prediction per scene required");
  if (scenes.empty()) throw std::invalid_argument("score: no scenes");
  ConfusionMatrix cm;
  std::uint64_t excluded = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const ExclusionMask mask = erode_boundaries(scenes[i].labels, 3.0);
    excluded += mask.excluded_count();
    accumulate(cm, scenes[i].labels, predictions[i], mask);
  }
  return make_report(cm, excluded);
}

double pixel_accuracy(const std::vector<Scene>& scenes, const std::vector<SegMap>& predictions) {
  if (scenes.size() != predictions.size()) throw std::invalid_argument("pixel_accuracy: one prediction per scene");
  std::uint64_t correct = 0, total = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const SegMap& gt = scenes[i].labels;
    if (predictions[i].height != gt.height || predictions[i].width != gt.width) {
      throw std::invalid_argument("pixel_accuracy: extent mismatch for scene " + scenes[i].id);
    }
    for (std::size_t p = 0; p < gt.size(); ++p) correct += predictions[i].labels[p] == gt.labels[p] ? 1 : 0;
    total += gt.size();
  }
  if (total == 0) throw std::invalid_argument("pixel_accuracy: no pixels");
  return static_cast<double>(correct) / static_cast<double>(total);
}

EvalReport evaluate(SegModel& model, const NormStats& stats, const std::vector<Scene>& scenes, std::size_t patch) {
  std::vector<SegMap> preds;
  preds.reserve(scenes.size());
  for (const auto& s : scenes) preds.push_back(predict(model, stats, s, patch));
  return score(scenes, preds);
}

EvalReport majority_baseline(const std::vector<Scene>& train, const std::vector<Scene>& scenes) {
  std::vector<std::uint64_t> counts(kNumClasses, 0);
  for (const auto& s : train) {
    for (auto v : s.labels.labels) {
      if (v < kNumClasses) ++counts[v];
    }
  }
  const auto majority =
      static_cast<std::uint8_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  std::vector<SegMap> preds;
  for (const auto& s : scenes) preds.emplace_back(s.height(), s.width(), majority);
  return score(scenes, preds);
}

Trainer::Trainer(const TrainConfig& cfg, std::vector<Scene> train, std::vector<Scene> val)
    : cfg_(cfg), rng_(cfg.seed ^ kShuffleSalt) {
  cfg_.validate();
  if (train.empty()) throw std::invalid_argument("trainer: no training scenes");
  for (const auto& s : train) {
    s.validate();
    if (s.labels.has_unknown()) throw std::invalid_argument("trainer: scene " + s.id + " has UNKNOWN labels");
  }
  stats_ = compute_stats(train);
  for (auto& s : train) train_.push_back(normalize(s, stats_));
  for (auto& s : val) val_.push_back(normalize(s, stats_));
  for (const auto& s : train_) {
    auto set = patchify(s, cfg_.patch, cfg_.stride);
    for (auto& p : set.patches) patches_.push_back(std::move(p));
  }
  model_ = std::make_unique<SegModel>(cfg_.model, cfg_.seed);
  velocity_ = make_velocity(model_->params());
}

EpochRecord Trainer::run_epoch() {
  if (epoch_ >= cfg_.epochs) throw std::logic_error("trainer: all epochs already completed");
  EpochRecord rec;
  rec.epoch = epoch_;
  rec.lr = lr_at(epoch_, cfg_);
  std::vector<std::size_t> order(patches_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(order, rng_);

  double loss_sum = 0.0;
  std::uint64_t correct = 0, pixels = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
    const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
    std::vector<const Scene*> items;
    for (std::size_t i = start; i < end; ++i) items.push_back(&patches_[order[i]].data);
    const Batch batch = make_batch(items);

    model_->params().zero_grad();
    const ModelOutput out = model_->forward(batch.image, batch.dsm, true);
    const Tensor loss = multitask_loss(out.head_log_probs, batch.labels);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      throw NumericalError("training diverged: loss " + std::to_string(value) + " at epoch " +
                           std::to_string(epoch_) + ", batch starting at patch " + std::to_string(start));
    }
    loss.backward();
    sgd_step(model_->params(), velocity_, rec.lr, cfg_.momentum, cfg_.weight_decay);
    loss_sum += value * static_cast<double>(items.size());

    const std::size_t h = batch.labels[0].height, w = batch.labels[0].width;
    for (std::size_t i = 0; i < items.size(); ++i) {
      const SegMap pred = decide(positive_probs(out.head_log_probs, i), h, w);
      for (std::size_t p = 0; p < pred.size(); ++p) correct += pred.labels[p] == batch.labels[i].labels[p] ? 1 : 0;
      pixels += pred.size();
    }
  }
  model_->params().zero_grad();
  rec.loss = loss_sum / static_cast<double>(order.size());
  rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(pixels);
  if (!val_.empty()) {
    const EvalReport r = evaluate(*model_, stats_, val_, cfg_.patch);
    rec.has_val = true;
    rec.val_oa = r.overall_accuracy;
    rec.val_mean_f1 = r.mean_f1;
    rec.val_kappa = r.kappa;
  }
  ++epoch_;
  history_.push_back(rec);
  return rec;
}

void Trainer::train(std::size_t until, const std::function<void(const EpochRecord&)>& on_epoch) {
  if (until == 0 || until > cfg_.epochs) until = cfg_.epochs;
  while (epoch_ < until) {
    const EpochRecord rec = run_epoch();
    if (on_epoch) on_epoch(rec);
  }
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  CheckpointInfo info;
  info.config_text = cfg_.to_text();
  info.model_hash = cfg_.model.hash();
  info.epoch = epoch_;
  info.rng_state = rng_.state();
  info.stats = stats_;
  info.history = history_;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    write_header(out, info);
    out << "params\n";
    model_->params().write(out);
    out << "buffers\n";
    model_->buffers().write(out);
    out << "velocity\n";
    velocity_.write(out);
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const CheckpointInfo info = read_header(in);
  if (info.model_hash != cfg_.model.hash()) {
    throw std::invalid_argument("checkpoint config hash mismatch: " + path.string());
  }
  if (!(info.stats == stats_)) throw std::invalid_argument("checkpoint normalization statistics differ from the data");
  if (info.epoch > cfg_.epochs) throw std::invalid_argument("checkpoint is past the configured epoch count");
  expect_line(in, "params");
  model_->params().read_into(in);
  expect_line(in, "buffers");
  model_->buffers().read_into(in);
  expect_line(in, "velocity");
  velocity_.read_into(in);
  epoch_ = info.epoch;
  rng_.set_state(info.rng_state);
  history_ = info.history;
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_header(in);
}

LoadedModel load_model(const std::filesystem::path& path, const ModelConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  LoadedModel lm;
  lm.info = read_header(in);
  const TrainConfig cfg = lm.info.config();
  if (cfg.model.hash() != lm.info.model_hash || (expected && expected->hash() != lm.info.model_hash)) {
    throw std::invalid_argument("checkpoint config hash mismatch: " + path.string());
  }
  lm.model = std::make_unique<SegModel>(cfg.model, cfg.seed);
  expect_line(in, "params");
  lm.model->params().read_into(in);
  expect_line(in, "buffers");
  lm.model->buffers().read_into(in);
  return lm;
}

std::string format_history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,lr,loss,train_accuracy,val_oa,val_mean_f1,val_kappa\n";
  for (const auto& r : history) {
    os << r.epoch << ',' << r.lr << ',' << r.loss << ',' << r.train_accuracy << ',';
    if (r.has_val) {
      os << r.val_oa << ',' << r.val_mean_f1 << ',' << r.val_kappa;
    } else {
      os << ",,";
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace segfuse
