#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace segfuse {

inline constexpr std::size_t kNumClasses = 6;

/// Class ids of the six-class ISPRS-style legend.
enum class LandCover : std::uint8_t {
  kImpervious = 0,
  kBuilding = 1,
  kLowVegetation = 2,
  kTree = 3,
  kCar = 4,
  kClutter = 5,
};

const char* class_name(std::size_t id);

/// Per-pixel class raster, row-major. 255 marks pixels no head claimed.
struct SegMap {
  static constexpr std::uint8_t kUnknown = 255;

  SegMap() = default;
  SegMap(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), labels(h * w, fill) {}

  std::uint8_t& at(std::size_t r, std::size_t c) { return labels[r * width + c]; }
  std::uint8_t at(std::size_t r, std::size_t c) const { return labels[r * width + c]; }
  std::size_t size() const { return labels.size(); }
  bool has_unknown() const {
    for (auto v : labels) if (v == kUnknown) return true;
    return false;
  }
  /// Throws unless every value is a class id < num_classes or kUnknown.
  void validate(std::size_t num_classes = kNumClasses) const {
    if (labels.size() != height * width) throw std::invalid_argument("SegMap: size mismatch");
    for (auto v : labels) {
      if (v != kUnknown && v >= num_classes) {
        throw std::invalid_argument("SegMap: invalid label " + std::to_string(v));
      }
    }
  }

  bool operator==(const SegMap&) const = default;

  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;
};

}  // namespace segfuse
