#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "teapcr/errors.hpp"
#include "teapcr/rng.hpp"

namespace teapcr {

using Index = std::int64_t;
using Shape = std::vector<Index>;

template <typename S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;
template <typename S>
using MatrixR = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<MatrixR<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const MatrixR<S>>;

inline Index numel_of(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename S>
struct TensorImpl {
  Shape shape;
  ArrayX<S> value;
  ArrayX<S> grad;  // size 0 until a gradient is accumulated
  bool requires_grad = false;
};

/// Dense n-dimensional array, row-major, shared-handle semantics.
/// Gradient buffers live in the shared impl so that every handle to a
/// parameter sees the gradients accumulated during backward().
template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : impl_(std::make_shared<TensorImpl<S>>()) {
    validate_shape(shape);
    impl_->shape = std::move(shape);
    impl_->value = ArrayX<S>::Zero(numel_of(impl_->shape));
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), requires_grad);
  }

  static Tensor full(Shape shape, S fill, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    t.value().setConstant(fill);
    return t;
  }

  static Tensor scalar(S v, bool requires_grad = false) {
    Tensor t(Shape{}, requires_grad);
    t.value()(0) = v;
    return t;
  }

  static Tensor from(Shape shape, std::initializer_list<double> vals,
                     bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    if (static_cast<Index>(vals.size()) != t.size())
      throw ShapeError("Tensor::from: " + std::to_string(vals.size()) +
                       " values for shape " + shape_str(t.shape()));
    Index i = 0;
    for (double v : vals) t.value()(i++) = static_cast<S>(v);
    return t;
  }

  static Tensor from_vector(Shape shape, const std::vector<double>& vals,
                            bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    if (static_cast<Index>(vals.size()) != t.size())
      throw ShapeError("Tensor::from_vector: size mismatch for " + shape_str(t.shape()));
    for (Index i = 0; i < t.size(); ++i) t.value()(i) = static_cast<S>(vals[i]);
    return t;
  }

  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi,
                        bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    for (Index i = 0; i < t.size(); ++i) t.value()(i) = static_cast<S>(rng.uniform(lo, hi));
    return t;
  }

  static Tensor normal(Shape shape, Rng& rng, double mean, double stddev,
                       bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    for (Index i = 0; i < t.size(); ++i) t.value()(i) = static_cast<S>(rng.normal(mean, stddev));
    return t;
  }

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const { return impl_->shape; }
  Index rank() const { return static_cast<Index>(impl_->shape.size()); }
  Index dim(Index i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
  Index size() const { return impl_->value.size(); }
  bool is_scalar() const { return size() == 1; }

  ArrayX<S>& value() { return impl_->value; }
  const ArrayX<S>& value() const { return impl_->value; }

  S item() const {
    if (!is_scalar()) throw UsageError("item(): tensor has " + std::to_string(size()) + " elements");
    return impl_->value(0);
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    impl_->requires_grad = b;
    return *this;
  }

  // Gradient state lives in the shared impl and follows handle semantics:
  // any copy of the handle may accumulate into it, so these are const.
  bool has_grad() const { return impl_->grad.size() != 0; }
  const ArrayX<S>& grad() const {
    if (!has_grad()) throw UsageError("grad(): no gradient accumulated");
    return impl_->grad;
  }
  ArrayX<S>& mutable_grad() const {
    ensure_grad();
    return impl_->grad;
  }
  void ensure_grad() const {
    if (impl_->grad.size() == 0) impl_->grad = ArrayX<S>::Zero(size());
  }
  void zero_grad() const { impl_->grad.resize(0); }

  template <typename Derived>
  void accumulate_grad(const Eigen::ArrayBase<Derived>& g) const {
    ensure_grad();
    if (g.size() != size())
      throw ShapeError("accumulate_grad: gradient size mismatch");
    impl_->grad += g;
  }

  /// Row-major 2-D view of the flat buffer.
  MatMap<S> as_matrix(Index rows, Index cols) {
    if (rows * cols != size()) throw ShapeError("as_matrix: element count mismatch");
    return MatMap<S>(impl_->value.data(), rows, cols);
  }
  ConstMatMap<S> as_matrix(Index rows, Index cols) const {
    if (rows * cols != size()) throw ShapeError("as_matrix: element count mismatch");
    return ConstMatMap<S>(impl_->value.data(), rows, cols);
  }
  MatMap<S> as_matrix() {
    if (rank() != 2) throw ShapeError("as_matrix(): tensor is not rank-2");
    return as_matrix(dim(0), dim(1));
  }
  ConstMatMap<S> as_matrix() const {
    if (rank() != 2) throw ShapeError("as_matrix(): tensor is not rank-2");
    return as_matrix(dim(0), dim(1));
  }
  MatMap<S> grad_matrix(Index rows, Index cols) const {
    ensure_grad();
    return MatMap<S>(impl_->grad.data(), rows, cols);
  }

  Tensor clone() const {
    Tensor t(shape(), requires_grad());
    t.value() = value();
    return t;
  }

  bool all_finite() const { return impl_->value.isFinite().all(); }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  const void* id() const { return impl_.get(); }

 private:
  static void validate_shape(const Shape& shape) {
    for (Index e : shape)
      if (e <= 0) throw ShapeError("Tensor: non-positive extent in " + shape_str(shape));
  }

  std::shared_ptr<TensorImpl<S>> impl_;
};

/// Integer tensor for token/label ids; not differentiable.
struct IdTensor {
  Shape shape;
  std::vector<Index> ids;

  IdTensor() = default;
  IdTensor(Shape s, std::vector<Index> v) : shape(std::move(s)), ids(std::move(v)) {
    if (numel_of(shape) != static_cast<Index>(ids.size()))
      throw ShapeError("IdTensor: shape " + shape_str(shape) + " does not match id count");
  }

  Index size() const { return static_cast<Index>(ids.size()); }
  Index dim(Index i) const { return shape[static_cast<std::size_t>(i)]; }
};

}  // namespace teapcr
