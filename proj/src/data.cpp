#include "segfuse/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "segfuse/rng.hpp"

namespace segfuse {

namespace {

struct PnmHeader {
  std::string magic;
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t maxval = 0;
};

std::string read_token(std::istream& in) {
  std::string tok;
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (std::isspace(ch)) {
      if (!tok.empty()) break;
    } else {
      tok.push_back(static_cast<char>(ch));
    }
    ch = in.get();
  }
  return tok;
}

std::size_t parse_positive(const std::string& tok, const std::filesystem::path& path) {
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(tok, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (tok.empty() || pos != tok.size() || v == 0) {
    throw std::runtime_error(path.string() + ": malformed header field '" + tok + "'");
  }
  return v;
}

PnmHeader read_header(std::istream& in, const std::filesystem::path& path) {
  PnmHeader h;
  h.magic = read_token(in);
  h.width = parse_positive(read_token(in), path);
  h.height = parse_positive(read_token(in), path);
  h.maxval = parse_positive(read_token(in), path);
  return h;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::vector<unsigned char> read_payload(std::istream& in, std::size_t bytes, const std::filesystem::path& path) {
  std::vector<unsigned char> buf(bytes);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes) throw std::runtime_error(path.string() + ": truncated pixel data");
  return buf;
}

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::clamp(std::round(v), 0.0, 255.0));
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const ColorImage& img) {
  const std::size_t plane = img.height * img.width;
  if (img.values.size() != 3 * plane) throw std::invalid_argument("write_ppm: image size mismatch");
  auto out = open_out(path);
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> buf(3 * plane);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) buf[3 * p + c] = to_byte(img.values[c * plane + p]);
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

ColorImage read_ppm(const std::filesystem::path& path) {
  auto in = open_in(path);
  const PnmHeader h = read_header(in, path);
  if (h.magic != "P6" || h.maxval != 255) throw std::runtime_error(path.string() + ": expected P6 with maxval 255");
  const std::size_t plane = h.height * h.width;
  const auto buf = read_payload(in, 3 * plane, path);
  ColorImage img{h.height, h.width, std::vector<double>(3 * plane)};
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) img.values[c * plane + p] = buf[3 * p + c];
  }
  return img;
}

void write_dsm_pgm(const std::filesystem::path& path, const Raster& dsm) {
  if (dsm.values.size() != dsm.height * dsm.width) throw std::invalid_argument("write_dsm_pgm: raster size mismatch");
  auto out = open_out(path);
  out << "P5\n" << dsm.width << ' ' << dsm.height << "\n65535\n";
  std::vector<unsigned char> buf(2 * dsm.values.size());
  for (std::size_t p = 0; p < dsm.values.size(); ++p) {
    const double cm = std::round(dsm.values[p] * 100.0);
    if (cm < 0.0 || cm > 65535.0) throw std::out_of_range("write_dsm_pgm: elevation outside 0..655.35 m");
    const auto v = static_cast<std::uint16_t>(cm);
    buf[2 * p] = static_cast<unsigned char>(v >> 8);
    buf[2 * p + 1] = static_cast<unsigned char>(v & 0xFF);
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Raster read_dsm_pgm(const std::filesystem::path& path) {
  auto in = open_in(path);
  const PnmHeader h = read_header(in, path);
  if (h.magic != "P5" || h.maxval != 65535) throw std::runtime_error(path.string() + ": expected 16-bit P5");
  const std::size_t n = h.height * h.width;
  const auto buf = read_payload(in, 2 * n, path);
  Raster dsm{h.height, h.width, std::vector<double>(n)};
  for (std::size_t p = 0; p < n; ++p) {
    const unsigned v = (static_cast<unsigned>(buf[2 * p]) << 8) | buf[2 * p + 1];
    dsm.values[p] = static_cast<double>(v) / 100.0;
  }
  return dsm;
}

void write_label_pgm(const std::filesystem::path& path, const SegMap& labels) {
  if (labels.size() != labels.height * labels.width) throw std::invalid_argument("write_label_pgm: size mismatch");
  auto out = open_out(path);
  out << "P5\n" << labels.width << ' ' << labels.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(labels.labels.data()), static_cast<std::streamsize>(labels.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

SegMap read_label_pgm(const std::filesystem::path& path) {
  auto in = open_in(path);
  const PnmHeader h = read_header(in, path);
  if (h.magic != "P5" || h.maxval != 255) throw std::runtime_error(path.string() + ": expected 8-bit P5");
  SegMap m(h.height, h.width);
  const auto buf = read_payload(in, m.size(), path);
  std::copy(buf.begin(), buf.end(), m.labels.begin());
  m.validate();
  return m;
}

void Scene::validate() const {
  labels.validate();
  const std::size_t h = labels.height, w = labels.width;
  if (image.height != h || image.width != w || image.values.size() != 3 * h * w) {
    throw std::invalid_argument("scene " + id + ": image extent differs from labels");
  }
  if (dsm.height != h || dsm.width != w || dsm.values.size() != h * w) {
    throw std::invalid_argument("scene " + id + ": dsm extent differs from labels");
  }
}

Scene crop(const Scene& scene, std::size_t row, std::size_t col, std::size_t h, std::size_t w) {
  const std::size_t H = scene.height(), W = scene.width();
  if (row + h > H || col + w > W) throw std::out_of_range("crop outside the scene");
  Scene out;
  out.id = scene.id;
  out.normalized = scene.normalized;
  out.image = {h, w, std::vector<double>(3 * h * w)};
  out.dsm = {h, w, std::vector<double>(h * w)};
  out.labels = SegMap(h, w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t src = (row + r) * W + col + c, dst = r * w + c;
      for (std::size_t ch = 0; ch < 3; ++ch) out.image.values[ch * h * w + dst] = scene.image.values[ch * H * W + src];
      out.dsm.values[dst] = scene.dsm.values[src];
      out.labels.labels[dst] = scene.labels.labels[src];
    }
  }
  return out;
}

std::vector<std::size_t> window_origins(std::size_t extent, std::size_t patch, std::size_t stride) {
  if (patch == 0 || stride == 0) throw std::invalid_argument("patch and stride must be positive");
  if (extent < patch) {
    throw std::invalid_argument("scene extent " + std::to_string(extent) + " is smaller than patch " +
                                std::to_string(patch));
  }
  std::vector<std::size_t> out;
  for (std::size_t o = 0; o + patch <= extent; o += stride) out.push_back(o);
  return out;
}

std::vector<std::size_t> covering_origins(std::size_t extent, std::size_t patch, std::size_t stride) {
  auto out = window_origins(extent, patch, stride);
  if (out.back() + patch < extent) out.push_back(extent - patch);
  return out;
}

std::size_t patch_count(std::size_t height, std::size_t width, std::size_t patch, std::size_t stride) {
  if (patch == 0 || stride == 0) throw std::invalid_argument("patch and stride must be positive");
  if (height < patch || width < patch) throw std::invalid_argument("scene smaller than patch");
  return ((height - patch) / stride + 1) * ((width - patch) / stride + 1);
}

PatchSet patchify(const Scene& scene, std::size_t patch, std::size_t stride) {
  scene.validate();
  PatchSet set;
  set.patch_size = patch;
  set.stride = stride;
  const auto rows = window_origins(scene.height(), patch, stride);
  const auto cols = window_origins(scene.width(), patch, stride);
  set.patches.reserve(rows.size() * cols.size());
  for (std::size_t r : rows) {
    for (std::size_t c : cols) set.patches.push_back({crop(scene, r, c, patch, patch), r, c});
  }
  return set;
}

NormStats compute_stats(const std::vector<Scene>& train) {
  if (train.empty()) throw std::invalid_argument("compute_stats: no training scenes");
  NormStats s;
  s.image_max = 0.0;
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& sc : train) {
    for (double v : sc.image.values) s.image_max = std::max(s.image_max, v);
    for (double v : sc.dsm.values) sum += v;
    count += sc.dsm.values.size();
  }
  if (count == 0) throw std::invalid_argument("compute_stats: empty scenes");
  if (!(s.image_max > 0.0)) throw std::invalid_argument("compute_stats: image is zero everywhere");
  s.dsm_mean = sum / static_cast<double>(count);
  double ss = 0.0;
  for (const auto& sc : train) {
    for (double v : sc.dsm.values) ss += (v - s.dsm_mean) * (v - s.dsm_mean);
  }
  s.dsm_std = std::sqrt(ss / static_cast<double>(count));
  if (!(s.dsm_std > 0.0)) throw std::invalid_argument("compute_stats: dsm has zero variance");
  return s;
}

Scene normalize(const Scene& scene, const NormStats& stats) {
  if (scene.normalized) return scene;
  if (!(stats.image_max > 0.0)) throw std::invalid_argument("normalize: image_max must be positive");
  if (!(stats.dsm_std > 0.0)) throw std::invalid_argument("normalize: dsm has zero variance");
  Scene out = scene;
  for (double& v : out.image.values) v /= stats.image_max;
  for (double& v : out.dsm.values) v = (v - stats.dsm_mean) / stats.dsm_std;
  out.normalized = true;
  return out;
}

namespace {

struct ClassLook {
  std::array<double, 3> color;  // IR, R, G
  double height;                // metres above ground
};

// Vegetation is bright in IR; built-up surfaces share a grey tone and differ
// mostly in height.
constexpr std::array<ClassLook, kNumClasses> kLooks{{
    {{125.0, 120.0, 125.0}, 0.0},   // impervious
    {{140.0, 112.0, 118.0}, 9.0},   // building
    {{190.0, 95.0, 110.0}, 0.3},    // low vegetation
    {{172.0, 82.0, 96.0}, 7.0},     // tree
    {{55.0, 60.0, 195.0}, 1.5},     // car
    {{95.0, 150.0, 62.0}, 2.0},     // clutter
}};

constexpr double kCarWeight = 2.5;
constexpr double kGroundLevel = 20.0;

}  // namespace

Scene synth_scene(std::uint64_t seed, std::size_t size, std::size_t class_count) {
  if (size < 64) throw std::invalid_argument("synth_scene: size must be at least 64");
  if (class_count == 0 || class_count > kNumClasses) throw std::invalid_argument("synth_scene: bad class count");
  SplitMix64 rng(seed ^ 0x5EED5CE7E5ULL);
  const std::size_t n_sites = std::max<std::size_t>(12, size * size / 512);

  struct Site {
    double r, c;
    std::uint8_t cls;
  };
  std::vector<Site> sites;
  std::vector<std::uint8_t> taken(size * size, 0);
  while (sites.size() < n_sites) {
    const std::size_t r = rng.below(size), c = rng.below(size);
    if (taken[r * size + c]) continue;
    taken[r * size + c] = 1;
    const std::uint8_t cls = sites.size() < class_count ? static_cast<std::uint8_t>(sites.size())
                                                        : static_cast<std::uint8_t>(rng.below(class_count));
    sites.push_back({static_cast<double>(r), static_cast<double>(c), cls});
  }

  Scene s;
  s.id = "synth_" + std::to_string(seed);
  s.labels = SegMap(size, size);
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t c = 0; c < size; ++c) {
      double best = std::numeric_limits<double>::infinity();
      std::uint8_t cls = 0;
      for (const auto& site : sites) {
        const double dr = static_cast<double>(r) - site.r, dc = static_cast<double>(c) - site.c;
        const double weight = site.cls == static_cast<std::uint8_t>(LandCover::kCar) ? kCarWeight : 1.0;
        const double d = weight * std::sqrt(dr * dr + dc * dc);
        if (d < best) {
          best = d;
          cls = site.cls;
        }
      }
      s.labels.at(r, c) = cls;
    }
  }

  const double gain = rng.uniform(0.85, 1.15);
  const double ramp_r = rng.uniform(-2.0, 2.0), ramp_c = rng.uniform(-2.0, 2.0);
  const std::size_t plane = size * size;
  s.image = {size, size, std::vector<double>(3 * plane)};
  s.dsm = {size, size, std::vector<double>(plane)};
  for (std::size_t p = 0; p < plane; ++p) {
    const ClassLook& look = kLooks[s.labels.labels[p]];
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double v = gain * look.color[ch] + 10.0 * rng.normal();
      s.image.values[ch * plane + p] = std::clamp(std::round(v), 0.0, 255.0);
    }
    const double r = static_cast<double>(p / size) / static_cast<double>(size);
    const double c = static_cast<double>(p % size) / static_cast<double>(size);
    double h = kGroundLevel + look.height + ramp_r * r + ramp_c * c + 0.15 * rng.normal();
    if (s.labels.labels[p] == static_cast<std::uint8_t>(LandCover::kTree)) h += 1.0 * rng.normal();
    s.dsm.values[p] = std::round(std::max(h, 0.0) * 100.0) / 100.0;
  }
  return s;
}

SplitIndices split_indices(std::size_t n, double train_fraction, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("split: need at least 2 scenes");
  const double n_train_f = std::round(static_cast<double>(n) * train_fraction);
  if (!(n_train_f >= 1.0 && n_train_f <= static_cast<double>(n - 1))) {
    throw std::invalid_argument("split: train fraction leaves an empty train or validation set");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  SplitMix64 rng(seed);
  shuffle(order, rng);
  const auto n_train = static_cast<std::size_t>(n_train_f);
  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return out;
}

std::pair<std::vector<Scene>, std::vector<Scene>> split(const std::vector<Scene>& scenes, double train_fraction,
                                                        std::uint64_t seed) {
  const auto idx = split_indices(scenes.size(), train_fraction, seed);
  std::pair<std::vector<Scene>, std::vector<Scene>> out;
  for (auto i : idx.train) out.first.push_back(scenes[i]);
  for (auto i : idx.val) out.second.push_back(scenes[i]);
  return out;
}

void save_scene(const std::filesystem::path& root, const Scene& scene) {
  scene.validate();
  if (scene.normalized) throw std::invalid_argument("save_scene: scene " + scene.id + " is normalized");
  const auto dir = root / scene.id;
  std::filesystem::create_directories(dir);
  write_ppm(dir / "image.ppm", scene.image);
  write_dsm_pgm(dir / "dsm.pgm", scene.dsm);
  write_label_pgm(dir / "labels.pgm", scene.labels);
}

Scene load_scene(const std::filesystem::path& dir) {
  Scene s;
  s.id = dir.filename().string();
  s.image = read_ppm(dir / "image.ppm");
  s.dsm = read_dsm_pgm(dir / "dsm.pgm");
  s.labels = read_label_pgm(dir / "labels.pgm");
  s.validate();
  return s;
}

std::vector<Scene> load_dataset(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw std::runtime_error("not a directory: " + root.string());
  std::vector<std::filesystem::path> dirs;
  for (const auto& entry : std::filesystem::directory_iterator(root)) {
    if (entry.is_directory() && std::filesystem::exists(entry.path() / "labels.pgm")) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<Scene> out;
  for (const auto& d : dirs) out.push_back(load_scene(d));
  if (out.empty()) throw std::runtime_error("no scenes under " + root.string());
  return out;
}

Batch make_batch(const std::vector<const Scene*>& scenes) {
  if (scenes.empty()) throw std::invalid_argument("make_batch: empty batch");
  const std::size_t n = scenes.size(), h = scenes[0]->height(), w = scenes[0]->width(), plane = h * w;
  std::vector<double> img(n * 3 * plane), dsm(n * plane);
  Batch b;
  for (std::size_t i = 0; i < n; ++i) {
    const Scene& s = *scenes[i];
    if (s.height() != h || s.width() != w) throw std::invalid_argument("make_batch: scenes differ in extent");
    std::copy(s.image.values.begin(), s.image.values.end(), img.begin() + static_cast<std::ptrdiff_t>(i * 3 * plane));
    std::copy(s.dsm.values.begin(), s.dsm.values.end(), dsm.begin() + static_cast<std::ptrdiff_t>(i * plane));
    b.labels.push_back(s.labels);
  }
  b.image = Tensor::from({n, 3, h, w}, std::move(img));
  b.dsm = Tensor::from({n, 1, h, w}, std::move(dsm));
  return b;
}

}  // namespace segfuse
