#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "segfuse/segmap.hpp"

namespace segfuse {

/// k x k counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = kNumClasses) : k_(classes), counts_(classes * classes, 0) {}
  static ConfusionMatrix from_rows(const std::vector<std::vector<std::uint64_t>>& rows);

  std::size_t classes() const { return k_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * k_ + pred]; }
  void add(std::size_t truth, std::size_t pred, std::uint64_t n = 1);

  std::uint64_t total() const;
  std::uint64_t true_positives(std::size_t i) const { return at(i, i); }
  std::uint64_t truth_count(std::size_t i) const;  // C_i, row sum
  std::uint64_t pred_count(std::size_t i) const;   // P_i, column sum

  /// Restriction to a subset of classes (pairs outside the subset dropped).
  ConfusionMatrix restricted(const std::vector<std::size_t>& keep) const;
  ConfusionMatrix transposed() const;

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

/// 1 = pixel excluded from scoring.
struct ExclusionMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> excluded;

  std::size_t excluded_count() const;
  bool operator==(const ExclusionMask&) const = default;
};

/// Excludes every pixel within Euclidean distance `radius` (inclusive) of a
/// pixel of a different ground-truth class.
ExclusionMask erode_boundaries(const SegMap& gt, double radius = 3.0);
/// Mask that excludes nothing.
ExclusionMask keep_all(const SegMap& gt);

void accumulate(ConfusionMatrix& cm, const SegMap& gt, const SegMap& pred, const ExclusionMask& mask);

/// 2 tp_i / (C_i + P_i); 0 when the class is absent and never predicted.
double f1(const ConfusionMatrix& cm, std::size_t i);
/// Cohen's kappa; 1 when chance agreement and observed agreement are both 1.
double kappa(const ConfusionMatrix& cm);
double overall_accuracy(const ConfusionMatrix& cm);

/// Object classes scored in the headline mean F1 (clutter excluded).
std::vector<std::size_t> object_classes(std::size_t num_classes = kNumClasses);

struct EvalReport {
  std::vector<double> per_class_f1;
  double mean_f1 = 0.0;        // object classes only
  double mean_f1_all = 0.0;    // every class
  double kappa = 0.0;          // all classes
  double overall_accuracy = 0.0;
  double kappa_objects = 0.0;  // restricted to object classes
  double overall_accuracy_objects = 0.0;
  std::uint64_t evaluated_pixels = 0;
  std::uint64_t excluded_pixels = 0;
  ConfusionMatrix confusion;
};

EvalReport make_report(const ConfusionMatrix& cm, std::uint64_t excluded_pixels);

/// Human-readable report, one "key: value" per line.
std::string format_report_text(const EvalReport& r);
/// Two columns under the header "class,f1": one row per class name, then
/// mean_f1, mean_f1_all, kappa, oa, kappa_objects, oa_objects, evaluated,
/// excluded in the same name,value form.
std::string format_report_csv(const EvalReport& r);

}  // namespace segfuse
