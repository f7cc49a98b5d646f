#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "segfuse/segmap.hpp"
#include "segfuse/tensor.hpp"

namespace segfuse {

/// 8-bit RGB-ordered raster, planar in memory: channel c of pixel (r, x) is
/// values[(c * height + r) * width + x].
struct ColorImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
  bool operator==(const ColorImage&) const = default;
};

/// Single-band raster (elevation in metres).
struct Raster {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
  bool operator==(const Raster&) const = default;
};

/// Binary PPM (P6, maxval 255). Values are rounded and clamped to 0..255.
void write_ppm(const std::filesystem::path& path, const ColorImage& img);
ColorImage read_ppm(const std::filesystem::path& path);
/// Binary 16-bit PGM (P5, maxval 65535, big-endian) holding centimetres.
void write_dsm_pgm(const std::filesystem::path& path, const Raster& dsm);
Raster read_dsm_pgm(const std::filesystem::path& path);
/// Binary 8-bit PGM (P5, maxval 255) holding class ids; 255 is UNKNOWN.
void write_label_pgm(const std::filesystem::path& path, const SegMap& labels);
SegMap read_label_pgm(const std::filesystem::path& path);

struct Scene {
  std::string id;
  ColorImage image;  // IRRG bands
  Raster dsm;
  SegMap labels;
  bool normalized = false;

  std::size_t height() const { return labels.height; }
  std::size_t width() const { return labels.width; }
  /// Throws unless the three rasters share their extents.
  void validate() const;
  bool operator==(const Scene&) const = default;
};

/// Crop of rows [row, row+h) and columns [col, col+w).
Scene crop(const Scene& scene, std::size_t row, std::size_t col, std::size_t h, std::size_t w);

struct Patch {
  Scene data;
  std::size_t row = 0;
  std::size_t col = 0;
};

struct PatchSet {
  std::vector<Patch> patches;
  std::size_t patch_size = 0;
  std::size_t stride = 0;
};

/// Sliding-window origins along one axis: 0, stride, ... up to extent-patch.
std::vector<std::size_t> window_origins(std::size_t extent, std::size_t patch, std::size_t stride);
/// Same as window_origins plus a final origin at extent-patch when the
/// regular grid leaves the far edge uncovered.
std::vector<std::size_t> covering_origins(std::size_t extent, std::size_t patch, std::size_t stride);
/// (floor((extent - patch) / stride) + 1) per axis, multiplied.
std::size_t patch_count(std::size_t height, std::size_t width, std::size_t patch, std::size_t stride);

/// Row-major sliding-window crops.
PatchSet patchify(const Scene& scene, std::size_t patch = 256, std::size_t stride = 32);

/// Training-split statistics used to normalize every scene.
struct NormStats {
  double image_max = 255.0;
  double dsm_mean = 0.0;
  double dsm_std = 1.0;
  bool operator==(const NormStats&) const = default;
};

/// image_max over all bands, dsm mean and population standard deviation over
/// all pixels. Throws on an empty set, a zero image or a constant dsm.
NormStats compute_stats(const std::vector<Scene>& train);
/// image / image_max, (dsm - mean) / std. A scene already normalized is
/// returned unchanged.
Scene normalize(const Scene& scene, const NormStats& stats);

/// Procedural stand-in for an aerial tile: Voronoi regions with one class
/// each, class-typical colours and heights, a smooth elevation ramp and
/// noise. Pixel values are quantized so files round-trip exactly.
Scene synth_scene(std::uint64_t seed, std::size_t size, std::size_t class_count = kNumClasses);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};
/// Seeded shuffle of 0..n-1, first round(n * fraction) go to training.
SplitIndices split_indices(std::size_t n, double train_fraction, std::uint64_t seed);
std::pair<std::vector<Scene>, std::vector<Scene>> split(const std::vector<Scene>& scenes, double train_fraction,
                                                        std::uint64_t seed);

/// <root>/<id>/{image.ppm, dsm.pgm, labels.pgm}
void save_scene(const std::filesystem::path& root, const Scene& scene);
Scene load_scene(const std::filesystem::path& dir);
/// Every scene directory under root, sorted by id.
std::vector<Scene> load_dataset(const std::filesystem::path& root);

/// Network inputs for a batch of (normalized) scenes of equal extent.
struct Batch {
  Tensor image;  // [N,3,H,W]
  Tensor dsm;    // [N,1,H,W]
  std::vector<SegMap> labels;
};
Batch make_batch(const std::vector<const Scene*>& scenes);

}  // namespace segfuse
