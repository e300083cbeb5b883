#pragma once

#include <cstdint>
#include <vector>

#include "teapcr/errors.hpp"

namespace teapcr {

struct ClassCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

/// K x K count matrix, cm(i,j) = number of samples with true class i
/// predicted as class j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes);

  int classes() const { return k_; }
  std::int64_t at(int true_class, int predicted) const;
  std::int64_t total() const { return total_; }

  void update(const std::vector<std::int64_t>& y_true, const std::vector<std::int64_t>& y_pred);
  void add(std::int64_t true_class, std::int64_t predicted);

  /// Entrywise sum; lets parallel evaluation shards combine.
  void merge(const ConfusionMatrix& other);

  ClassCounts per_class_counts(int k) const;

  double accuracy() const;
  double macro_precision() const;
  double macro_recall() const;
  /// Harmonic mean of the macro-averaged precision and recall (not the mean
  /// of per-class F1 scores; the two differ).
  double macro_f1() const;

 private:
  void require_scored() const;

  int k_;
  std::int64_t total_ = 0;
  std::vector<std::int64_t> counts_;
};

}  // namespace teapcr
