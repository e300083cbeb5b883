#include "teapcr/metrics.hpp"

#include <string>

namespace teapcr {

ConfusionMatrix::ConfusionMatrix(int classes) : k_(classes) {
  if (classes < 2) throw ConfigError("ConfusionMatrix: need at least 2 classes");
  counts_.assign(static_cast<std::size_t>(classes) * classes, 0);
}

std::int64_t ConfusionMatrix::at(int true_class, int predicted) const {
  return counts_[static_cast<std::size_t>(true_class) * k_ + predicted];
}

void ConfusionMatrix::add(std::int64_t true_class, std::int64_t predicted) {
  if (true_class < 0 || true_class >= k_)
    throw IndexError("ConfusionMatrix: true label " + std::to_string(true_class) +
                     " out of range [0," + std::to_string(k_) + ")");
  if (predicted < 0 || predicted >= k_)
    throw IndexError("ConfusionMatrix: prediction " + std::to_string(predicted) +
                     " out of range [0," + std::to_string(k_) + ")");
  ++counts_[static_cast<std::size_t>(true_class) * k_ + static_cast<std::size_t>(predicted)];
  ++total_;
}

void ConfusionMatrix::update(const std::vector<std::int64_t>& y_true,
                             const std::vector<std::int64_t>& y_pred) {
  if (y_true.size() != y_pred.size())
    throw ShapeError("ConfusionMatrix::update: label vectors differ in length");
  for (std::size_t n = 0; n < y_true.size(); ++n) add(y_true[n], y_pred[n]);
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw ShapeError("ConfusionMatrix::merge: class counts differ");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  total_ += other.total_;
}

ClassCounts ConfusionMatrix::per_class_counts(int k) const {
  if (k < 0 || k >= k_) throw IndexError("per_class_counts: class out of range");
  ClassCounts c;
  c.tp = at(k, k);
  std::int64_t col = 0, row = 0;
  for (int i = 0; i < k_; ++i) {
    col += at(i, k);
    row += at(k, i);
  }
  c.fp = col - c.tp;
  c.fn = row - c.tp;
  c.tn = total_ - c.tp - c.fp - c.fn;
  return c;
}

void ConfusionMatrix::require_scored() const {
  if (total_ == 0) throw MetricError("metric undefined: no samples scored");
}

double ConfusionMatrix::accuracy() const {
  require_scored();
  std::int64_t trace = 0;
  for (int k = 0; k < k_; ++k) trace += at(k, k);
  return static_cast<double>(trace) / static_cast<double>(total_);
}

double ConfusionMatrix::macro_precision() const {
  require_scored();
  double sum = 0.0;
  for (int k = 0; k < k_; ++k) {
    const ClassCounts c = per_class_counts(k);
    const std::int64_t denom = c.tp + c.fp;
    sum += denom == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
  }
  return sum / k_;
}

double ConfusionMatrix::macro_recall() const {
  require_scored();
  double sum = 0.0;
  for (int k = 0; k < k_; ++k) {
    const ClassCounts c = per_class_counts(k);
    const std::int64_t denom = c.tp + c.fn;
    sum += denom == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
  }
  return sum / k_;
}

double ConfusionMatrix::macro_f1() const {
  const double p = macro_precision();
  const double r = macro_recall();
  return (p + r) == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

}  // namespace teapcr
