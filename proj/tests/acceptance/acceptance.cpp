// Acceptance gate: one PASS/FAIL line per criterion.
// Usage: segfuse_acceptance [criterion ...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "segfuse/data.hpp"
#include "segfuse/effunet.hpp"
#include "segfuse/fmm.hpp"
#include "segfuse/gradsuite.hpp"
#include "segfuse/metrics.hpp"
#include "segfuse/model.hpp"
#include "segfuse/trainer.hpp"
#include "segfuse/transformer.hpp"

using namespace segfuse;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Tensor random_tensor(const Shape& shape, SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(shape, std::move(v));
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct ScratchDir {
  fs::path path;
  explicit ScratchDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("segfuse_accept_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  double worst_op = 0.0, worst_composite = 0.0;
  std::string failures;
  std::size_t runs = 0;
  for (const GradCase& c : gradient_cases()) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const GradCheckResult r = c.run(seed);
      ++runs;
      double& worst = c.composite ? worst_composite : worst_op;
      worst = std::max(worst, r.max_rel_error);
      if (!(r.max_rel_error < c.tolerance()) || r.checked == 0) {
        failures += " " + c.name + "@" + std::to_string(seed) + "=" + fmt("%.2e", r.max_rel_error);
      }
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = failures.empty() && secs < 120.0;
  o.detail = std::to_string(gradient_cases().size()) + " cases x 5 seeds (" + std::to_string(runs) +
             " checks), max op error " + fmt("%.2e", worst_op) + " (< 1e-6), max composite error " +
             fmt("%.2e", worst_composite) + " (< 1e-5), " + fmt("%.1f", secs) + " s (< 120 s)";
  if (!failures.empty()) o.detail += "; failing:" + failures;
  return o;
}

// Worst |sum - 1| over slices of a [.., axis, ..] tensor laid out row-major.
double slice_sum_error(const std::vector<double>& v, const Shape& shape, std::size_t axis, bool exp_first) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];
  double worst = 0.0;
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      double s = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double x = v[(o * len + k) * inner + in];
        s += exp_first ? std::exp(x) : x;
      }
      worst = std::max(worst, std::abs(s - 1.0));
    }
  return worst;
}

Outcome normalization_suite() {
  SplitMix64 rng(2024);
  double worst = 0.0;
  std::size_t slices = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rank = 2 + rng.below(3);
    Shape shape;
    for (std::size_t i = 0; i < rank; ++i) shape.push_back(1 + rng.below(7));
    const std::size_t axis = rng.below(rank);
    const double spread = std::pow(10.0, rng.uniform(-1.0, 2.0));
    const Tensor x = random_tensor(shape, rng, -spread, spread);
    worst = std::max(worst, slice_sum_error(softmax(x, axis).values(), shape, axis, false));
    worst = std::max(worst, slice_sum_error(log_softmax(x, axis).values(), shape, axis, true));

    ParamStore p, b;
    const std::size_t c = 1 + rng.below(6), tokens = 1 + rng.below(6), dim = 1 + rng.below(8);
    Tokenizer tok(ParamBuilder(p, b, trial), c, tokens, dim);
    for (auto& [path, t] : p)
      for (double& v : t.mutable_data()) v *= spread;
    const Shape fshape{1 + rng.below(2), c, 1 + rng.below(9), 1 + rng.below(9)};
    const TokenizerOutput out = tok.forward(random_tensor(fshape, rng));
    worst = std::max(worst, slice_sum_error(out.attention.values(), out.attention.shape(), 2, false));
    worst = std::max(worst, slice_sum_error(out.features.values(), out.features.shape(), 2, false));

    MultiHeadAttention mha(ParamBuilder(p, b, trial + 1000, "mha"), 4, 4, 2);
    const AttentionOutput att = mha.forward(random_tensor({1, 3, 4}, rng, -spread, spread),
                                            random_tensor({1, 5, 4}, rng, -spread, spread));
    worst = std::max(worst, slice_sum_error(att.weights.values(), att.weights.shape(), 3, false));
    slices += 5;
  }
  Outcome o;
  o.pass = worst <= 1e-9;
  o.detail = "100 random inputs, " + std::to_string(slices) +
             " softmax/log-softmax/tokenizer/attention tensors, max |sum - 1| = " + fmt("%.2e", worst) +
             " (<= 1e-9)";
  return o;
}

Outcome shape_suite() {
  std::vector<std::string> bad;
  SplitMix64 rng(7);

  ParamStore p, b;
  Tokenizer tok(ParamBuilder(p, b, 1, "tok"), 32, 6, 32);
  const Tensor tokens = tok(random_tensor({1, 32, 65, 65}, rng));
  if (tokens.shape() != Shape{1, 6, 32}) bad.push_back("tokenizer " + shape_str(tokens.shape()));

  EffUNet net(ParamBuilder(p, b, 2, "effunet"), 3, UNetConfig{}, {});
  const EncoderOutput enc = net.encode(random_tensor({1, 3, 64, 64}, rng), false);
  std::size_t extent = enc.bottleneck.size(2), level_index = 0;
  for (const UpLevel& level : net.levels()) {
    const Tensor x = random_tensor({1, level.in_channels, extent, extent}, rng);
    const Tensor up = conv_transpose2d(x, level.up_weight, level.up_bias, 2);
    const Shape want{1, level.in_channels / 2, 2 * extent, 2 * extent};
    if (up.shape() != want) bad.push_back("decoder step " + shape_str(up.shape()));
    extent *= 2;
    ++level_index;
  }

  SegModel model(ModelConfig{}, 3);
  const ModelOutput out = model.forward(random_tensor({1, 3, 64, 64}, rng), random_tensor({1, 1, 64, 64}, rng), false);
  if (out.head_log_probs.size() != 6) bad.push_back(std::to_string(out.head_log_probs.size()) + " heads");
  for (const Tensor& h : out.head_log_probs)
    if (h.shape() != Shape{1, 2, 64, 64}) bad.push_back("head " + shape_str(h.shape()));

  Outcome o;
  o.pass = bad.empty() && level_index > 0;
  o.detail = "tokens " + shape_str(tokens.shape()) + ", " + std::to_string(level_index) +
             " decoder steps double extent and halve channels, model heads " +
             std::to_string(out.head_log_probs.size()) + " x " +
             (out.head_log_probs.empty() ? std::string("?") : shape_str(out.head_log_probs[0].shape()));
  for (const auto& s : bad) o.detail += "; mismatch: " + s;
  return o;
}

// Labels drawn per pixel (block == 1) or per block x block tile, then a
// fraction of pixels set to UNKNOWN.
SegMap random_unknown_map(std::size_t side, std::size_t block, double unknown, SplitMix64& rng) {
  const std::size_t tiles = (side + block - 1) / block;
  std::vector<std::uint8_t> tile_labels(tiles * tiles);
  for (auto& t : tile_labels) t = static_cast<std::uint8_t>(rng.below(kNumClasses));
  SegMap m(side, side);
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c)
      m.at(r, c) = rng.uniform() < unknown ? SegMap::kUnknown : tile_labels[(r / block) * tiles + c / block];
  return m;
}

Outcome fmm_oracle() {
  const auto t0 = Clock::now();
  SplitMix64 rng(31337);
  std::size_t checked = 0, mismatches = 0, idempotence_failures = 0, unknown_left = 0;
  for (int map = 0; map < 200; ++map) {
    const SegMap m = random_unknown_map(16, map % 2 ? 1 : 4, 0.3, rng);
    const SegMap out = inpaint(m);
    if (out.has_unknown()) ++unknown_left;
    if (!(inpaint(out) == out)) ++idempotence_failures;
    for (std::size_t p = 0; p < m.size(); ++p) {
      if (m.labels[p] != SegMap::kUnknown) continue;
      double best[kNumClasses];
      std::fill(best, best + kNumClasses, std::numeric_limits<double>::infinity());
      for (std::size_t q = 0; q < m.size(); ++q) {
        if (m.labels[q] == SegMap::kUnknown) continue;
        const double d = std::hypot(static_cast<double>(p / 16) - static_cast<double>(q / 16),
                                    static_cast<double>(p % 16) - static_cast<double>(q % 16));
        best[m.labels[q]] = std::min(best[m.labels[q]], d);
      }
      const std::size_t nearest = static_cast<std::size_t>(std::min_element(best, best + kNumClasses) - best);
      double runner_up = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < kNumClasses; ++k)
        if (k != nearest) runner_up = std::min(runner_up, best[k]);
      if (runner_up - best[nearest] <= 1.0) continue;
      ++checked;
      if (out.labels[p] != nearest) ++mismatches;
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = mismatches == 0 && idempotence_failures == 0 && unknown_left == 0 && checked > 0 && secs < 30.0;
  o.detail = "200 maps 16x16 at 30% UNKNOWN (pixel and 4x4-block labels), " + std::to_string(checked) + " unambiguous pixels, " +
             std::to_string(mismatches) + " oracle mismatches, " + std::to_string(idempotence_failures) +
             " idempotence failures, " + std::to_string(unknown_left) + " maps with UNKNOWN left, " +
             fmt("%.2f", secs) + " s (< 30 s)";
  return o;
}

Outcome metrics_oracle() {
  std::vector<std::string> bad;
  const auto near = [&](const std::string& what, double got, double want) {
    if (!(std::abs(got - want) <= 1e-12)) bad.push_back(what + "=" + fmt("%.15g", got));
  };
  const ConfusionMatrix two = ConfusionMatrix::from_rows({{20, 5}, {10, 65}});
  near("kappa", kappa(two), 0.625);
  near("oa", overall_accuracy(two), 0.85);
  near("f1_0", f1(two, 0), 40.0 / 55.0);
  near("f1_1", f1(two, 1), 130.0 / 145.0);
  const ConfusionMatrix f1_case = ConfusionMatrix::from_rows({{8, 2}, {2, 5}});
  near("f1 tp8", f1(f1_case, 0), 0.8);
  near("oa 7/8", overall_accuracy(ConfusionMatrix::from_rows({{3, 1}, {0, 4}})), 7.0 / 8.0);
  near("kappa diag", kappa(ConfusionMatrix::from_rows({{4, 0, 0}, {0, 3, 0}, {0, 0, 9}})), 1.0);
  near("kappa chance", kappa(ConfusionMatrix::from_rows({{1, 1}, {1, 1}})), 0.0);
  near("f1 absent", f1(ConfusionMatrix::from_rows({{0, 0}, {0, 4}}), 0), 0.0);

  SplitMix64 rng(55);
  std::size_t erosion_mismatches = 0, excluded_total = 0;
  for (int trial = 0; trial < 50; ++trial) {
    SegMap gt(32, 32, static_cast<std::uint8_t>(rng.below(kNumClasses)));
    const std::size_t rects = 2 + rng.below(8);
    for (std::size_t k = 0; k < rects; ++k) {
      const std::size_t r0 = rng.below(32), c0 = rng.below(32);
      const std::size_t r1 = std::min<std::size_t>(32, r0 + 1 + rng.below(14));
      const std::size_t c1 = std::min<std::size_t>(32, c0 + 1 + rng.below(14));
      const auto v = static_cast<std::uint8_t>(rng.below(kNumClasses));
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) gt.at(r, c) = v;
    }
    if (trial % 5 == 0)
      for (auto& v : gt.labels)
        if (rng.uniform() < 0.02) v = static_cast<std::uint8_t>(rng.below(kNumClasses));
    const ExclusionMask mask = erode_boundaries(gt, 3.0);
    excluded_total += mask.excluded_count();
    for (std::size_t p = 0; p < gt.size(); ++p) {
      bool want = false;
      for (std::size_t q = 0; q < gt.size() && !want; ++q) {
        if (gt.labels[q] == gt.labels[p]) continue;
        const double d = std::hypot(static_cast<double>(p / 32) - static_cast<double>(q / 32),
                                    static_cast<double>(p % 32) - static_cast<double>(q % 32));
        want = d <= 3.0;
      }
      if (want != (mask.excluded[p] != 0)) ++erosion_mismatches;
    }
  }
  Outcome o;
  o.pass = bad.empty() && erosion_mismatches == 0;
  o.detail = "kappa([[20,5],[10,65]]) = " + fmt("%.15g", kappa(two)) +
             ", F1/OA/kappa hand values within 1e-12, erosion on 50 rasters 32x32 at radius 3: " +
             std::to_string(erosion_mismatches) + " mismatches vs brute-force scan (" +
             std::to_string(excluded_total) + " excluded pixels)";
  for (const auto& s : bad) o.detail += "; off: " + s;
  return o;
}

Outcome loss_anchor() {
  SplitMix64 rng(9);
  std::vector<SegMap> gt(2, SegMap(8, 8));
  for (auto& m : gt)
    for (auto& v : m.labels) v = static_cast<std::uint8_t>(rng.below(kNumClasses));
  const Tensor uniform = log_softmax(Tensor::zeros({2, 2, 8, 8}), 1);
  double worst = 0.0;
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    std::vector<Tensor> heads(i + 1, uniform);
    worst = std::max(worst, std::abs(multitask_loss(heads, gt).item() - std::log(2.0)));
  }

  // Full model with zeroed classifiers: every head emits uniform logits.
  SegModel model(ModelConfig::tiny(), 4);
  for (ClassHead& h : model.heads()) {
    for (double& v : h.classifier.weight.mutable_data()) v = 0.0;
    if (h.classifier.bias.defined())
      for (double& v : h.classifier.bias.mutable_data()) v = 0.0;
  }
  const ModelOutput out = model.forward(random_tensor({2, 3, 16, 16}, rng), random_tensor({2, 1, 16, 16}, rng), false);
  std::vector<SegMap> gt16(2, SegMap(16, 16));
  for (auto& m : gt16)
    for (auto& v : m.labels) v = static_cast<std::uint8_t>(rng.below(kNumClasses));
  for (std::size_t i = 0; i < out.head_log_probs.size(); ++i) {
    const double per_head = multitask_loss({out.head_log_probs[i]}, gt16).item();
    worst = std::max(worst, std::abs(per_head - std::log(2.0)));
  }
  worst = std::max(worst, std::abs(multitask_loss(out.head_log_probs, gt16).item() - std::log(2.0)));

  Outcome o;
  o.pass = worst <= 1e-12;
  o.detail = "uniform head logits, max |loss - ln 2| = " + fmt("%.2e", worst) + " (<= 1e-12)";
  return o;
}

Outcome recipe_anchors() {
  std::vector<std::string> bad;
  const TrainConfig paper = TrainConfig::paper();
  const double lr10 = lr_at(10, paper), lr30 = lr_at(30, paper), lr50 = lr_at(50, paper);
  if (std::abs(lr10 - 0.01) > 1e-15) bad.push_back("lr(10)");
  if (std::abs(lr30 - 0.001) > 1e-15) bad.push_back("lr(30)");
  if (std::abs(lr50 - 0.0001) > 1e-15) bad.push_back("lr(50)");

  const auto formula = [](std::size_t h, std::size_t w, std::size_t patch, std::size_t stride) {
    return ((h - patch) / stride + 1) * ((w - patch) / stride + 1);
  };
  Scene s256 = synth_scene(1, 256);
  const std::size_t n256 = patchify(s256, 256, 32).patches.size();
  if (n256 != 1) bad.push_back("256/256 count " + std::to_string(n256));
  const std::size_t n320 = patch_count(320, 320, 256, 32);
  if (n320 != 9) bad.push_back("320 count " + std::to_string(n320));
  const Scene s320 = synth_scene(2, 320);
  if (patchify(s320, 256, 32).patches.size() != 9) bad.push_back("320 patchify");
  // Tile extents of the two benchmark datasets in the published geometry.
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{2494, 2064}, {6000, 6000}}) {
    if (patch_count(h, w, 256, 32) != formula(h, w, 256, 32)) bad.push_back("tile " + std::to_string(h));
  }
  SplitMix64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t patch = 16 + rng.below(3) * 16, stride = 8 * (1 + rng.below(4));
    const std::size_t side = std::max<std::size_t>(64, patch + rng.below(80));
    const Scene s = synth_scene(100 + trial, side);
    if (patchify(s, patch, stride).patches.size() != formula(side, side, patch, stride))
      bad.push_back("random geometry " + std::to_string(side) + "/" + std::to_string(patch));
  }
  Outcome o;
  o.pass = bad.empty();
  o.detail = "lr at epochs 10/30/50 = " + fmt("%g", lr10) + " / " + fmt("%g", lr30) + " / " + fmt("%g", lr50) +
             ", patches 256->" + std::to_string(n256) + ", 320->" + std::to_string(n320) +
             ", closed form matches patchify on 20 random geometries and the 256/32 tile geometry";
  for (const auto& s : bad) o.detail += "; off: " + s;
  return o;
}

// Desk benchmark shared by the smoke and ablation criteria.
TrainConfig benchmark_config(std::uint64_t seed, bool transformer_path, std::size_t stride) {
  TrainConfig cfg = TrainConfig::desk();
  cfg.model = ModelConfig::tiny();
  cfg.model.use_transformer_path = transformer_path;
  cfg.patch = 32;
  cfg.stride = stride;
  cfg.base_lr = 0.05;
  cfg.epochs = 30;
  cfg.lr_drop_epochs = {20, 25};
  cfg.seed = seed;
  return cfg;
}

std::vector<Scene> synth_set(std::uint64_t first, std::size_t n) {
  std::vector<Scene> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(synth_scene(first + i, 64));
  return out;
}

struct SmokeRun {
  double train_accuracy = 0.0;
  double val_oa = 0.0;
  std::string checkpoint;
  std::string report;
  std::string history;
};

SmokeRun smoke_run(const fs::path& dir, const std::vector<Scene>& train, const std::vector<Scene>& val) {
  const TrainConfig cfg = benchmark_config(7, true, 8);
  Trainer t(cfg, train, val);
  t.train();
  t.save_checkpoint(dir / "checkpoint.sckp");
  std::vector<SegMap> preds;
  for (const Scene& s : t.train_scenes()) preds.push_back(predict(t.model(), t.stats(), s, cfg.patch));
  SmokeRun r;
  r.train_accuracy = pixel_accuracy(t.train_scenes(), preds);
  const EvalReport report = evaluate(t.model(), t.stats(), t.val_scenes(), cfg.patch);
  r.val_oa = report.overall_accuracy;
  {
    std::ofstream out(dir / "report.csv", std::ios::binary);
    out << format_report_csv(report);
  }
  r.checkpoint = read_bytes(dir / "checkpoint.sckp");
  r.report = read_bytes(dir / "report.csv");
  r.history = format_history_csv(t.history());
  return r;
}

Outcome end_to_end_smoke() {
  const auto t0 = Clock::now();
  const std::vector<Scene> train = synth_set(100, 8), val = synth_set(200, 4);
  ScratchDir a("smoke_a"), b("smoke_b");
  const SmokeRun first = smoke_run(a.path, train, val);
  const SmokeRun second = smoke_run(b.path, train, val);
  const double secs = seconds_since(t0);
  const double baseline = majority_baseline(train, val).overall_accuracy;
  const bool identical =
      first.checkpoint == second.checkpoint && first.report == second.report && first.history == second.history;
  Outcome o;
  o.pass = first.train_accuracy >= 0.95 && first.val_oa > baseline && identical && secs < 600.0;
  o.detail = "train pixel accuracy " + fmt("%.4f", first.train_accuracy) + " (>= 0.95), held-out OA " +
             fmt("%.4f", first.val_oa) + " vs majority baseline " + fmt("%.4f", baseline) + ", checkpoints " +
             (first.checkpoint == second.checkpoint ? "identical" : "DIFFER") + " (" +
             std::to_string(first.checkpoint.size()) + " bytes), reports " +
             (first.report == second.report ? "identical" : "DIFFER") + ", two runs in " + fmt("%.0f", secs) +
             " s (< 600 s)";
  return o;
}

Outcome ablation_echo() {
  const auto t0 = Clock::now();
  std::size_t wins = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::vector<Scene> train = synth_set(seed * 100, 8), val = synth_set(seed * 100 + 50, 4);
    double oa[2] = {0.0, 0.0};
    for (int full = 0; full < 2; ++full) {
      const TrainConfig cfg = benchmark_config(seed, full == 1, 16);
      Trainer t(cfg, train, val);
      t.train();
      oa[full] = evaluate(t.model(), t.stats(), t.val_scenes(), cfg.patch).overall_accuracy;
    }
    const bool win = oa[0] <= oa[1];
    wins += win;
    per_seed += " " + std::to_string(seed) + ":" + fmt("%.3f", oa[1]) + "/" + fmt("%.3f", oa[0]) + (win ? "+" : "-");
    std::fprintf(stderr, "  ablation seed %llu: full %.4f, without transformer path %.4f\n",
                 static_cast<unsigned long long>(seed), oa[1], oa[0]);
  }
  Outcome o;
  o.pass = wins >= 7;
  o.detail = "ablated OA <= full OA on " + std::to_string(wins) + " of 10 seeds (>= 7 required), " +
             fmt("%.0f", seconds_since(t0)) + " s; full/ablated per seed:" + per_seed;
  return o;
}

struct Criterion {
  const char* name;
  Outcome (*run)();
};

const Criterion kCriteria[] = {
    {"gradient_suite", gradient_suite},
    {"normalization_suite", normalization_suite},
    {"shape_suite", shape_suite},
    {"fmm_oracle", fmm_oracle},
    {"metrics_oracle", metrics_oracle},
    {"loss_anchor", loss_anchor},
    {"recipe_anchors", recipe_anchors},
    {"end_to_end_smoke", end_to_end_smoke},
    {"ablation_echo", ablation_echo},
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> wanted(argv + 1, argv + argc);
  for (const auto& w : wanted) {
    const bool known = std::any_of(std::begin(kCriteria), std::end(kCriteria),
                                   [&](const Criterion& c) { return w == c.name; });
    if (!known) {
      std::fprintf(stderr, "unknown criterion '%s'; available:", w.c_str());
      for (const auto& c : kCriteria) std::fprintf(stderr, " %s", c.name);
      std::fprintf(stderr, "\n");
      return 1;
    }
  }
  int failed = 0;
  for (const auto& c : kCriteria) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.name) == wanted.end()) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
