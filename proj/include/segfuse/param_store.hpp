#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "segfuse/tensor.hpp"

namespace segfuse {

/// Writes one tensor in the STNR container: "STNR1\n", an ASCII line
/// "dtype=f64 dims=d0,d1,...\n", then little-endian float64 payload.
void write_stnr(std::ostream& out, const Tensor& t);
Tensor read_stnr(std::istream& in);
void save_stnr(const std::filesystem::path& path, const Tensor& t);
Tensor load_stnr(const std::filesystem::path& path);

/// Named parameters keyed by dot-separated path. Iteration is lexicographic
/// by path. Entries are shared handles: layers keep the same Tensor, so
/// loading values into the store updates the layers in place.
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor>;

  /// Registers a tensor; duplicate paths are rejected.
  Tensor add(const std::string& path, Tensor t);
  bool contains(const std::string& path) const { return entries_.count(path) != 0; }
  const Tensor& get(const std::string& path) const;
  Tensor& get(const std::string& path);

  std::size_t size() const { return entries_.size(); }
  std::size_t total_numel() const;
  Map::const_iterator begin() const { return entries_.begin(); }
  Map::const_iterator end() const { return entries_.end(); }
  Map::iterator begin() { return entries_.begin(); }
  Map::iterator end() { return entries_.end(); }

  void zero_grad();

  /// "SPRM1\n", "count=N\n", then per entry "name=<path>\n" and an STNR block.
  void write(std::ostream& out) const;
  /// Reads a store written by write(); every path and shape must match an
  /// existing entry and values are copied into place.
  void read_into(std::istream& in);

 private:
  Map entries_;
};

/// Fan-in uniform init: U(-b, b), b = 1 / sqrt(fan_in), drawn from a
/// SplitMix64 stream seeded with seed ^ fnv1a64(path).
Tensor fan_in_uniform(const Shape& shape, std::size_t fan_in, std::uint64_t seed,
                       const std::string& path);

}  // namespace segfuse
