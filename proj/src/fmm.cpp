#include "segfuse/fmm.hpp"

#include <cmath>
#include <limits>
#include <queue>
#include <stdexcept>
#include <tuple>

namespace segfuse {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct FrontEntry {
  double arrival;
  std::uint64_t seq;
  std::size_t pixel;
  bool operator>(const FrontEntry& o) const {
    return std::tie(arrival, seq) > std::tie(o.arrival, o.seq);
  }
};

class FastMarcher {
 public:
  explicit FastMarcher(const SegMap& seeds)
      : h_(seeds.height),
        w_(seeds.width),
        status_(h_ * w_, MarchStatus::kFar),
        arrival_(h_ * w_, kInf) {
    result_.labels = seeds;
  }

  MarchResult run() {
    std::size_t seeds = 0;
    for (std::size_t p = 0; p < h_ * w_; ++p) {
      if (result_.labels.labels[p] != SegMap::kUnknown) {
        status_[p] = MarchStatus::kKnown;
        arrival_[p] = 0.0;
        ++seeds;
      }
    }
    if (seeds == 0) throw std::invalid_argument("no seeds");
    for (std::size_t p = 0; p < h_ * w_; ++p) {
      if (status_[p] == MarchStatus::kKnown) refresh_neighbours(p);
    }
    double last = 0.0;
    while (!front_.empty()) {
      const FrontEntry e = front_.top();
      front_.pop();
      if (status_[e.pixel] == MarchStatus::kKnown || e.arrival != arrival_[e.pixel]) continue;  // stale
      if (e.arrival < last) throw std::logic_error("fast marching: arrival order violated");
      last = e.arrival;
      status_[e.pixel] = MarchStatus::kKnown;
      result_.labels.labels[e.pixel] = upwind_label(e.pixel);
      result_.finalize_order.push_back(e.pixel);
      refresh_neighbours(e.pixel);
    }
    result_.arrival = std::move(arrival_);
    return std::move(result_);
  }

 private:
  // Neighbours in row-major order: up, left, right, down.
  template <class F>
  void for_neighbours(std::size_t p, F&& f) const {
    const std::size_t r = p / w_, c = p % w_;
    if (r > 0) f(p - w_);
    if (c > 0) f(p - 1);
    if (c + 1 < w_) f(p + 1);
    if (r + 1 < h_) f(p + w_);
  }

  double known_arrival(std::size_t p) const { return status_[p] == MarchStatus::kKnown ? arrival_[p] : kInf; }

  double solve(std::size_t p) const {
    const std::size_t r = p / w_, c = p % w_;
    double horizontal = kInf, vertical = kInf;
    if (c > 0) horizontal = std::min(horizontal, known_arrival(p - 1));
    if (c + 1 < w_) horizontal = std::min(horizontal, known_arrival(p + 1));
    if (r > 0) vertical = std::min(vertical, known_arrival(p - w_));
    if (r + 1 < h_) vertical = std::min(vertical, known_arrival(p + w_));
    return eikonal_update(horizontal, vertical);
  }

  std::uint8_t upwind_label(std::size_t p) const {
    double best = kInf;
    std::uint8_t label = SegMap::kUnknown;
    for_neighbours(p, [&](std::size_t q) {
      if (status_[q] == MarchStatus::kKnown && arrival_[q] < best) {
        best = arrival_[q];
        label = result_.labels.labels[q];
      }
    });
    return label;
  }

  void refresh_neighbours(std::size_t p) {
    for_neighbours(p, [&](std::size_t q) {
      if (status_[q] == MarchStatus::kKnown) return;
      const double t = solve(q);
      if (t < arrival_[q]) {
        arrival_[q] = t;
        status_[q] = MarchStatus::kTrial;
        front_.push({t, next_seq_++, q});
      }
    });
  }

  std::size_t h_, w_;
  std::vector<MarchStatus> status_;
  std::vector<double> arrival_;
  std::priority_queue<FrontEntry, std::vector<FrontEntry>, std::greater<>> front_;
  std::uint64_t next_seq_ = 0;
  MarchResult result_;
};

}  // namespace

double eikonal_update(double a, double b) {
  if (std::isinf(a) && std::isinf(b)) throw std::invalid_argument("eikonal update without a KNOWN neighbour");
  if (std::abs(a - b) < 1.0) return (a + b + std::sqrt(2.0 - (a - b) * (a - b))) / 2.0;
  return std::min(a, b) + 1.0;
}

MarchResult march(const SegMap& seeds) {
  if (seeds.size() == 0 || seeds.size() != seeds.height * seeds.width) {
    throw std::invalid_argument("march: empty or malformed map");
  }
  return FastMarcher(seeds).run();
}

SegMap inpaint(const SegMap& seg) {
  if (!seg.has_unknown()) {
    if (seg.size() == 0) throw std::invalid_argument("no seeds");
    return seg;
  }
  return march(seg).labels;
}

}  // namespace segfuse
