#include "segfuse/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace segfuse {

ConfusionMatrix ConfusionMatrix::from_rows(const std::vector<std::vector<std::uint64_t>>& rows) {
  ConfusionMatrix cm(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    if (rows[t].size() != rows.size()) throw std::invalid_argument("confusion matrix must be square");
    for (std::size_t p = 0; p < rows.size(); ++p) cm.add(t, p, rows[t][p]);
  }
  return cm;
}

void ConfusionMatrix::add(std::size_t truth, std::size_t pred, std::uint64_t n) {
  if (truth >= k_ || pred >= k_) throw std::out_of_range("confusion matrix index out of range");
  counts_[truth * k_ + pred] += n;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t s = 0;
  for (auto c : counts_) s += c;
  return s;
}

std::uint64_t ConfusionMatrix::truth_count(std::size_t i) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < k_; ++p) s += at(i, p);
  return s;
}

std::uint64_t ConfusionMatrix::pred_count(std::size_t i) const {
  std::uint64_t s = 0;
  for (std::size_t t = 0; t < k_; ++t) s += at(t, i);
  return s;
}

ConfusionMatrix ConfusionMatrix::restricted(const std::vector<std::size_t>& keep) const {
  ConfusionMatrix out(keep.size());
  for (std::size_t a = 0; a < keep.size(); ++a) {
    for (std::size_t b = 0; b < keep.size(); ++b) out.add(a, b, at(keep[a], keep[b]));
  }
  return out;
}

ConfusionMatrix ConfusionMatrix::transposed() const {
  ConfusionMatrix out(k_);
  for (std::size_t t = 0; t < k_; ++t) {
    for (std::size_t p = 0; p < k_; ++p) out.add(p, t, at(t, p));
  }
  return out;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw std::invalid_argument("confusion matrix class count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

std::size_t ExclusionMask::excluded_count() const {
  std::size_t n = 0;
  for (auto e : excluded) n += e ? 1 : 0;
  return n;
}

ExclusionMask erode_boundaries(const SegMap& gt, double radius) {
  if (gt.has_unknown()) throw std::invalid_argument("erode_boundaries: UNKNOWN in ground truth");
  if (radius < 0.0) throw std::invalid_argument("erode_boundaries: negative radius");
  ExclusionMask mask{gt.height, gt.width, std::vector<std::uint8_t>(gt.size(), 0)};
  const long reach = static_cast<long>(std::floor(radius));
  const double r2 = radius * radius;
  const long h = static_cast<long>(gt.height), w = static_cast<long>(gt.width);
  for (long r = 0; r < h; ++r) {
    for (long c = 0; c < w; ++c) {
      const std::uint8_t own = gt.labels[static_cast<std::size_t>(r * w + c)];
      bool hit = false;
      for (long dy = -reach; dy <= reach && !hit; ++dy) {
        const long rr = r + dy;
        if (rr < 0 || rr >= h) continue;
        for (long dx = -reach; dx <= reach; ++dx) {
          const long cc = c + dx;
          if (cc < 0 || cc >= w || static_cast<double>(dy * dy + dx * dx) > r2) continue;
          if (gt.labels[static_cast<std::size_t>(rr * w + cc)] != own) {
            hit = true;
            break;
          }
        }
      }
      mask.excluded[static_cast<std::size_t>(r * w + c)] = hit ? 1 : 0;
    }
  }
  return mask;
}

ExclusionMask keep_all(const SegMap& gt) {
  return ExclusionMask{gt.height, gt.width, std::vector<std::uint8_t>(gt.size(), 0)};
}

void accumulate(ConfusionMatrix& cm, const SegMap& gt, const SegMap& pred, const ExclusionMask& mask) {
  if (gt.height != pred.height || gt.width != pred.width || mask.height != gt.height || mask.width != gt.width) {
    throw std::invalid_argument("accumulate: raster extents differ");
  }
  for (std::size_t p = 0; p < gt.size(); ++p) {
    if (pred.labels[p] == SegMap::kUnknown) throw std::invalid_argument("accumulate: UNKNOWN in prediction");
  }
  for (std::size_t p = 0; p < gt.size(); ++p) {
    if (mask.excluded[p]) continue;
    cm.add(gt.labels[p], pred.labels[p]);
  }
}

double f1(const ConfusionMatrix& cm, std::size_t i) {
  const std::uint64_t denom = cm.truth_count(i) + cm.pred_count(i);
  if (denom == 0) return 0.0;
  return 2.0 * static_cast<double>(cm.true_positives(i)) / static_cast<double>(denom);
}

double kappa(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw std::invalid_argument("kappa of an empty confusion matrix");
  const double n = static_cast<double>(total);
  double trace = 0.0, pe = 0.0;
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    trace += static_cast<double>(cm.true_positives(i));
    pe += (static_cast<double>(cm.truth_count(i)) / n) * (static_cast<double>(cm.pred_count(i)) / n);
  }
  const double po = trace / n;
  if (pe == 1.0) return po == 1.0 ? 1.0 : 0.0;
  return (po - pe) / (1.0 - pe);
}

double overall_accuracy(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw std::invalid_argument("overall accuracy of an empty confusion matrix");
  double trace = 0.0;
  for (std::size_t i = 0; i < cm.classes(); ++i) trace += static_cast<double>(cm.true_positives(i));
  return trace / static_cast<double>(total);
}

std::vector<std::size_t> object_classes(std::size_t num_classes) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < num_classes; ++i) {
    if (i != static_cast<std::size_t>(LandCover::kClutter)) out.push_back(i);
  }
  return out;
}

EvalReport make_report(const ConfusionMatrix& cm, std::uint64_t excluded_pixels) {
  EvalReport r;
  r.confusion = cm;
  r.evaluated_pixels = cm.total();
  r.excluded_pixels = excluded_pixels;
  const auto objects = object_classes(cm.classes());
  double sum_all = 0.0, sum_obj = 0.0;
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    r.per_class_f1.push_back(f1(cm, i));
    sum_all += r.per_class_f1.back();
  }
  for (std::size_t i : objects) sum_obj += r.per_class_f1[i];
  r.mean_f1_all = sum_all / static_cast<double>(cm.classes());
  r.mean_f1 = objects.empty() ? 0.0 : sum_obj / static_cast<double>(objects.size());
  if (cm.total() > 0) {
    r.kappa = kappa(cm);
    r.overall_accuracy = overall_accuracy(cm);
  }
  const ConfusionMatrix obj = cm.restricted(objects);
  if (obj.total() > 0) {
    r.kappa_objects = kappa(obj);
    r.overall_accuracy_objects = overall_accuracy(obj);
  }
  return r;
}

std::string format_report_text(const EvalReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6);
  for (std::size_t i = 0; i < r.per_class_f1.size(); ++i) {
    os << "f1." << class_name(i) << ": " << r.per_class_f1[i] << '\n';
  }
  os << "mean_f1: " << r.mean_f1 << '\n'
     << "mean_f1_all: " << r.mean_f1_all << '\n'
     << "kappa: " << r.kappa << '\n'
     << "overall_accuracy: " << r.overall_accuracy << '\n'
     << "kappa_objects: " << r.kappa_objects << '\n'
     << "overall_accuracy_objects: " << r.overall_accuracy_objects << '\n'
     << "evaluated_pixels: " << r.evaluated_pixels << '\n'
     << "excluded_pixels: " << r.excluded_pixels << '\n';
  return os.str();
}

std::string format_report_csv(const EvalReport& r) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "class,f1\n";
  for (std::size_t i = 0; i < r.per_class_f1.size(); ++i) os << class_name(i) << ',' << r.per_class_f1[i] << '\n';
  os << "mean_f1," << r.mean_f1 << '\n'
     << "mean_f1_all," << r.mean_f1_all << '\n'
     << "kappa," << r.kappa << '\n'
     << "oa," << r.overall_accuracy << '\n'
     << "kappa_objects," << r.kappa_objects << '\n'
     << "oa_objects," << r.overall_accuracy_objects << '\n'
     << "evaluated," << r.evaluated_pixels << '\n'
     << "excluded," << r.excluded_pixels << '\n';
  return os.str();
}

}  // namespace segfuse
