#pragma once

#include <cstdint>
#include <vector>

#include "segfuse/segmap.hpp"

namespace segfuse {

/// First-order upwind eikonal update for unit speed on a unit grid.
/// horizontal / vertical are the smallest KNOWN arrival among the left/right
/// and up/down neighbours (infinity when absent). Throws when both are absent.
double eikonal_update(double horizontal, double vertical);

enum class MarchStatus : std::uint8_t { kFar, kTrial, kKnown };

struct MarchResult {
  SegMap labels;                       // no UNKNOWN left
  std::vector<double> arrival;         // 0 at seeds
  std::vector<std::size_t> finalize_order;  // initially UNKNOWN pixels, in the order they became KNOWN
};

/// Fast marching from every labeled pixel at once. Each UNKNOWN pixel takes
/// the label of its KNOWN 4-neighbour with the smallest arrival at the moment
/// it is finalized (ties: row-major order). Frontier ties resolve by
/// insertion order.
MarchResult march(const SegMap& seeds);

/// Fills every UNKNOWN pixel with the label of the front that reaches it
/// first. Throws std::invalid_argument("no seeds") for an all-UNKNOWN map.
SegMap inpaint(const SegMap& seg);

}  // namespace segfuse
