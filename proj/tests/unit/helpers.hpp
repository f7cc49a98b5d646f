#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "segfuse/ops.hpp"
#include "segfuse/param_store.hpp"
#include "segfuse/rng.hpp"

namespace testing {

using segfuse::Shape;
using segfuse::Tensor;

inline std::vector<double> uniform_values(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  segfuse::SplitMix64 rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
  return Tensor::from(shape, uniform_values(segfuse::numel_of(shape), seed, lo, hi), requires_grad);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Overwrites every parameter of a store with fresh uniform values so tests
/// do not depend on the default init.
inline void randomize(segfuse::ParamStore& store, std::uint64_t seed, double scale = 0.5) {
  segfuse::SplitMix64 rng(seed);
  for (auto& [path, t] : store) {
    for (double& v : t.mutable_data()) v = rng.uniform(-scale, scale);
  }
}

inline void fill(Tensor t, double value) {
  for (double& v : t.mutable_data()) v = value;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("segfuse_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
