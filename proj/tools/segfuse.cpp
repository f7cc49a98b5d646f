// segfuse command-line driver.
// Exit codes: 0 success, 1 usage or input error, 2 numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "segfuse/data.hpp"
#include "segfuse/fmm.hpp"
#include "segfuse/gradsuite.hpp"
#include "segfuse/metrics.hpp"
#include "segfuse/trainer.hpp"

using namespace segfuse;
namespace fs = std::filesystem;

namespace {

constexpr int kUsageError = 1;
constexpr int kNumericalFailure = 2;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// Presets first ("preset = desk|paper", "model.preset = desk|tiny"), then
// individual keys. Unknown keys are rejected.
TrainConfig load_train_config(const std::string& path) {
  KeyValueConfig kv = path.empty() ? KeyValueConfig{} : KeyValueConfig::load(path);
  const std::string preset = kv.get_string("preset", "desk");
  TrainConfig cfg;
  if (preset == "desk") {
    cfg = TrainConfig::desk();
  } else if (preset == "paper") {
    cfg = TrainConfig::paper();
  } else {
    throw std::invalid_argument("config: unknown preset '" + preset + "' (desk, paper)");
  }
  const std::string model_preset = kv.get_string("model.preset", "");
  if (model_preset == "tiny") {
    cfg.model = ModelConfig::tiny();
  } else if (model_preset == "desk") {
    cfg.model = ModelConfig::desk();
  } else if (!model_preset.empty()) {
    throw std::invalid_argument("config: unknown model.preset '" + model_preset + "' (desk, tiny)");
  }
  cfg.apply(kv);
  const auto unused = kv.unused_keys();
  if (!unused.empty()) throw std::invalid_argument("config: unknown key '" + unused.front() + "'");
  cfg.validate();
  return cfg;
}

int cmd_synth(const fs::path& out, std::size_t scenes, std::size_t size, std::uint64_t seed) {
  fs::create_directories(out);
  for (std::size_t i = 0; i < scenes; ++i) {
    const Scene s = synth_scene(seed + i, size);
    save_scene(out, s);
    std::cout << s.id << '\n';
  }
  return 0;
}

int cmd_patchify(const fs::path& in, const fs::path& out, std::size_t patch, std::size_t stride) {
  std::size_t total = 0;
  for (const Scene& s : load_dataset(in)) {
    const PatchSet ps = patchify(s, patch, stride);
    for (const Patch& p : ps.patches) {
      Scene tile = p.data;
      tile.id = s.id + "_r" + std::to_string(p.row) + "_c" + std::to_string(p.col);
      save_scene(out, tile);
    }
    total += ps.patches.size();
    std::cout << s.id << ": " << ps.patches.size() << " patches\n";
  }
  std::cout << "total: " << total << " patches\n";
  return 0;
}

int cmd_train(const std::string& config_path, const fs::path& data, const fs::path& out, bool resume) {
  const TrainConfig cfg = load_train_config(config_path);
  const auto [train, val] = split(load_dataset(data), cfg.train_fraction, cfg.seed);
  fs::create_directories(out);
  const fs::path ckpt = out / "checkpoint.sckp";

  Trainer trainer(cfg, train, val);
  if (resume && fs::exists(ckpt)) {
    trainer.load_checkpoint(ckpt);
    std::cerr << "resumed at epoch " << trainer.epoch() << '\n';
  }
  std::cerr << train.size() << " training scenes, " << val.size() << " validation scenes, "
            << trainer.patch_count() << " patches\n";
  trainer.train(0, [&](const EpochRecord& r) {
    std::fprintf(stderr, "epoch %zu lr %.6g loss %.6f train_acc %.4f", r.epoch, r.lr, r.loss, r.train_accuracy);
    if (r.has_val) std::fprintf(stderr, " val_oa %.4f val_f1 %.4f", r.val_oa, r.val_mean_f1);
    std::fprintf(stderr, "\n");
    if (cfg.checkpoint_every > 0 && (r.epoch + 1) % cfg.checkpoint_every == 0) trainer.save_checkpoint(ckpt);
  });
  trainer.save_checkpoint(ckpt);
  write_text(out / "history.csv", format_history_csv(trainer.history()));
  write_text(out / "config.txt", cfg.to_text());
  const EvalReport report = evaluate(trainer.model(), trainer.stats(), val, cfg.patch);
  write_text(out / "report.txt", format_report_text(report));
  write_text(out / "report.csv", format_report_csv(report));
  std::cout << format_report_text(report);
  return 0;
}

int cmd_predict(const fs::path& ckpt, const fs::path& scene_dir, const fs::path& out) {
  LoadedModel loaded = load_model(ckpt);
  const Scene scene = load_scene(scene_dir);
  const SegMap map = predict(*loaded.model, loaded.info.stats, scene, loaded.info.config().patch);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_label_pgm(out, map);
  return 0;
}

int cmd_eval(const fs::path& ckpt, const fs::path& data, const fs::path& report_path) {
  LoadedModel loaded = load_model(ckpt);
  const EvalReport report = evaluate(*loaded.model, loaded.info.stats, load_dataset(data), loaded.info.config().patch);
  const std::string text = report_path.extension() == ".csv" ? format_report_csv(report) : format_report_text(report);
  write_text(report_path, text);
  std::cout << text;
  return 0;
}

int cmd_inpaint(const fs::path& in, const fs::path& out) {
  write_label_pgm(out, inpaint(read_label_pgm(in)));
  return 0;
}

int cmd_gradcheck(const std::string& module, std::uint64_t seed) {
  const std::vector<GradCase> cases = module == "all" ? gradient_cases() : gradient_cases_for(module);
  if (cases.empty()) {
    std::cerr << "unknown module '" << module << "'; available:";
    for (const GradCase& c : gradient_cases()) std::cerr << ' ' << c.name;
    std::cerr << '\n';
    return kUsageError;
  }
  bool ok = true;
  for (const GradCase& c : cases) {
    const GradCheckResult r = c.run(seed);
    const bool pass = r.max_rel_error < c.tolerance() && r.checked > 0;
    ok = ok && pass;
    std::printf("%s %s seed %llu: max relative error %.3e (tolerance %.0e), %zu checked, %zu at kinks\n",
                pass ? "PASS" : "FAIL", c.name.c_str(), static_cast<unsigned long long>(seed), r.max_rel_error,
                c.tolerance(), r.checked, r.skipped_kinks);
  }
  return ok ? 0 : kNumericalFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic segmentation of aerial imagery with image and elevation inputs"};
  app.require_subcommand(1);

  fs::path synth_out;
  std::size_t synth_scenes = 16, synth_size = 64;
  std::uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth-data", "Write procedural scenes");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--scenes", synth_scenes, "Number of scenes");
  synth->add_option("--size", synth_size, "Scene side in pixels (>= 64)");
  synth->add_option("--seed", synth_seed, "Seed of the first scene");

  fs::path patch_in, patch_out;
  std::size_t patch_size = 256, patch_stride = 32;
  auto* patch = app.add_subcommand("patchify", "Cut scenes into sliding-window patches");
  patch->add_option("--in", patch_in, "Dataset directory")->required();
  patch->add_option("--out", patch_out, "Output directory")->required();
  patch->add_option("--patch", patch_size, "Patch side");
  patch->add_option("--stride", patch_stride, "Window stride");

  std::string train_config;
  fs::path train_data, train_out;
  bool train_resume = false;
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", train_config, "key = value configuration file");
  train->add_option("--data", train_data, "Dataset directory")->required();
  train->add_option("--out", train_out, "Run directory")->required();
  train->add_flag("--resume", train_resume, "Continue from <out>/checkpoint.sckp when present");

  fs::path pred_ckpt, pred_scene, pred_out;
  auto* pred = app.add_subcommand("predict", "Label one scene");
  pred->add_option("--ckpt", pred_ckpt, "Checkpoint file")->required();
  pred->add_option("--scene", pred_scene, "Scene directory")->required();
  pred->add_option("--out", pred_out, "Output label PGM")->required();

  fs::path eval_ckpt, eval_data, eval_report;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a dataset");
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--data", eval_data, "Dataset directory")->required();
  eval->add_option("--report", eval_report, "Report path (.csv for CSV, text otherwise)")->required();

  fs::path inpaint_in, inpaint_out;
  auto* inp = app.add_subcommand("inpaint", "Fill UNKNOWN pixels (255) of a label PGM");
  inp->add_option("--in", inpaint_in, "Input label PGM")->required();
  inp->add_option("--out", inpaint_out, "Output label PGM")->required();

  std::string grad_module = "all";
  std::uint64_t grad_seed = 0;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  grad->add_option("--module", grad_module, "Module or case name, or 'all'");
  grad->add_option("--seed", grad_seed, "Input seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    if (*synth) return cmd_synth(synth_out, synth_scenes, synth_size, synth_seed);
    if (*patch) return cmd_patchify(patch_in, patch_out, patch_size, patch_stride);
    if (*train) return cmd_train(train_config, train_data, train_out, train_resume);
    if (*pred) return cmd_predict(pred_ckpt, pred_scene, pred_out);
    if (*eval) return cmd_eval(eval_ckpt, eval_data, eval_report);
    if (*inp) return cmd_inpaint(inpaint_in, inpaint_out);
    if (*grad) return cmd_gradcheck(grad_module, grad_seed);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  }
  return kUsageError;
}
