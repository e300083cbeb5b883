#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "teapcr/tape.hpp"
#include "teapcr/tensor.hpp"

namespace teapcr {

namespace detail {

template <typename S>
inline bool want_grad(std::initializer_list<Tensor<S>> ins) {
  if (!Tape<S>::current()) return false;
  for (const auto& t : ins)
    if (t.requires_grad()) return true;
  return false;
}

template <typename S, typename Fn>
inline void record(const char* op, std::vector<Tensor<S>> ins, Tensor<S>& out, Fn&& fn) {
  out.set_requires_grad(true);
  Tape<S>::current()->record(op, std::move(ins), out, std::forward<Fn>(fn));
}

struct AxisView {
  Index outer, n, inner;
};

inline Index normalize_axis(Index axis, Index rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank)
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return axis;
}

inline AxisView axis_view(const Shape& s, Index axis) {
  axis = normalize_axis(axis, static_cast<Index>(s.size()));
  AxisView v{1, s[static_cast<std::size_t>(axis)], 1};
  for (Index i = 0; i < axis; ++i) v.outer *= s[static_cast<std::size_t>(i)];
  for (Index i = axis + 1; i < static_cast<Index>(s.size()); ++i)
    v.inner *= s[static_cast<std::size_t>(i)];
  return v;
}

inline void check_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b)
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("add", a.shape(), b.shape());
  Tensor<S> out(a.shape());
  out.value() = a.value() + b.value();
  if (detail::want_grad<S>({a, b})) {
    detail::record<S>("add", {a, b}, out, [a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) a.accumulate_grad(g);
      if (b.requires_grad()) b.accumulate_grad(g);
    });
  }
  return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("sub", a.shape(), b.shape());
  Tensor<S> out(a.shape());
  out.value() = a.value() - b.value();
  if (detail::want_grad<S>({a, b})) {
    detail::record<S>("sub", {a, b}, out, [a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) a.accumulate_grad(g);
      if (b.requires_grad()) b.accumulate_grad(-g);
    });
  }
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("mul", a.shape(), b.shape());
  Tensor<S> out(a.shape());
  out.value() = a.value() * b.value();
  if (detail::want_grad<S>({a, b})) {
    detail::record<S>("mul", {a, b}, out, [a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) a.accumulate_grad(g * b.value());
      if (b.requires_grad()) b.accumulate_grad(g * a.value());
    });
  }
  return out;
}

template <typename S>
Tensor<S> mul_const(const Tensor<S>& a, double c) {
  Tensor<S> out(a.shape());
  out.value() = a.value() * static_cast<S>(c);
  if (detail::want_grad<S>({a})) {
    detail::record<S>("mul_const", {a}, out, [a, out, c]() mutable {
      a.accumulate_grad(out.grad() * static_cast<S>(c));
    });
  }
  return out;
}

template <typename S>
Tensor<S> add_const(const Tensor<S>& a, double c) {
  Tensor<S> out(a.shape());
  out.value() = a.value() + static_cast<S>(c);
  if (detail::want_grad<S>({a})) {
    detail::record<S>("add_const", {a}, out, [a, out]() mutable { a.accumulate_grad(out.grad()); });
  }
  return out;
}

/// a + b where b's shape is a strict suffix of a's shape; b is tiled over the
/// leading dimensions (bias rows, positional tables).
template <typename S>
Tensor<S> add_broadcast(const Tensor<S>& a, const Tensor<S>& b) {
  if (b.rank() >= a.rank())
    throw ShapeError("add_broadcast: rhs rank must be smaller than lhs rank");
  for (Index i = 0; i < b.rank(); ++i)
    if (b.dim(i) != a.dim(a.rank() - b.rank() + i))
      throw ShapeError("add_broadcast: " + shape_str(b.shape()) + " is not a suffix of " +
                       shape_str(a.shape()));
  const Index inner = b.size();
  const Index outer = a.size() / inner;
  Tensor<S> out(a.shape());
  auto om = out.as_matrix(outer, inner);
  om = a.as_matrix(outer, inner);
  om.rowwise() += b.value().matrix().transpose();
  if (detail::want_grad<S>({a, b})) {
    detail::record<S>("add_broadcast", {a, b}, out, [a, b, out, outer, inner]() mutable {
      if (a.requires_grad()) a.accumulate_grad(out.grad());
      if (b.requires_grad()) {
        ConstMatMap<S> g(out.grad().data(), outer, inner);
        b.grad_matrix(1, inner).noalias() += g.colwise().sum();
      }
    });
  }
  return out;
}

/// Multiply by a single-element tensor (learnable fusion weight).
template <typename S>
Tensor<S> scale_by(const Tensor<S>& x, const Tensor<S>& s) {
  if (!s.is_scalar()) throw ShapeError("scale_by: scale must have one element");
  Tensor<S> out(x.shape());
  const S sv = s.value()(0);
  out.value() = x.value() * sv;
  if (detail::want_grad<S>({x, s})) {
    detail::record<S>("scale_by", {x, s}, out, [x, s, out, sv]() mutable {
      const auto& g = out.grad();
      if (x.requires_grad()) x.accumulate_grad(g * sv);
      if (s.requires_grad()) {
        s.ensure_grad();
        s.mutable_grad()(0) += (g * x.value()).sum();
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, double c) { return mul_const(a, c); }
template <typename S>
Tensor<S> operator*(double c, const Tensor<S>& a) { return mul_const(a, c); }

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape new_shape) {
  if (numel_of(new_shape) != x.size())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
  Tensor<S> out(std::move(new_shape));
  out.value() = x.value();
  if (detail::want_grad<S>({x})) {
    detail::record<S>("reshape", {x}, out, [x, out]() mutable { x.accumulate_grad(out.grad()); });
  }
  return out;
}

namespace detail {

/// Calls f(out_offset, in_offset) for every element of the permuted tensor.
template <typename F>
inline void for_each_permuted(const Shape& in_shape, const std::vector<Index>& perm, F&& f) {
  const Index r = static_cast<Index>(in_shape.size());
  std::vector<Index> in_strides(r, 1);
  for (Index i = r - 2; i >= 0; --i)
    in_strides[i] = in_strides[i + 1] * in_shape[static_cast<std::size_t>(i + 1)];
  Shape out_shape(r);
  for (Index i = 0; i < r; ++i) out_shape[i] = in_shape[static_cast<std::size_t>(perm[i])];
  std::vector<Index> idx(r, 0);
  const Index total = numel_of(in_shape);
  for (Index o = 0; o < total; ++o) {
    Index in_off = 0;
    for (Index i = 0; i < r; ++i) in_off += idx[i] * in_strides[static_cast<std::size_t>(perm[i])];
    f(o, in_off);
    for (Index i = r - 1; i >= 0; --i) {
      if (++idx[i] < out_shape[static_cast<std::size_t>(i)]) break;
      idx[i] = 0;
    }
  }
}

}  // namespace detail

/// Reorder axes: out.shape[i] = x.shape[perm[i]].
template <typename S>
Tensor<S> permute_axes(const Tensor<S>& x, const std::vector<Index>& perm) {
  const Index r = x.rank();
  if (static_cast<Index>(perm.size()) != r)
    throw ShapeError("permute_axes: perm size does not match rank");
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  for (Index p : perm) {
    if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)])
      throw ShapeError("permute_axes: invalid permutation");
    seen[static_cast<std::size_t>(p)] = true;
  }
  Shape out_shape(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i)
    out_shape[i] = x.dim(perm[static_cast<Index>(i)]);
  Tensor<S> out(std::move(out_shape));
  const Shape in_shape = x.shape();
  detail::for_each_permuted(in_shape, perm, [&](Index o, Index i) { out.value()(o) = x.value()(i); });
  if (detail::want_grad<S>({x})) {
    detail::record<S>("permute_axes", {x}, out, [x, out, in_shape, perm]() mutable {
      x.ensure_grad();
      detail::for_each_permuted(in_shape, perm,
                                [&](Index o, Index i) { x.mutable_grad()(i) += out.grad()(o); });
    });
  }
  return out;
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, Index axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  axis = detail::normalize_axis(axis, static_cast<Index>(first.size()));
  Shape out_shape = first;
  Index total_axis = 0;
  for (const auto& p : parts) {
    if (p.rank() != static_cast<Index>(first.size()))
      throw ShapeError("concat: rank mismatch");
    for (Index i = 0; i < p.rank(); ++i)
      if (i != axis && p.dim(i) != first[static_cast<std::size_t>(i)])
        throw ShapeError("concat: shape mismatch off the concat axis");
    total_axis += p.dim(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = total_axis;
  Tensor<S> out(out_shape);
  const auto ov = detail::axis_view(out_shape, axis);
  Index offset = 0;
  for (const auto& p : parts) {
    const Index n_p = p.dim(axis);
    for (Index o = 0; o < ov.outer; ++o) {
      const Index src = o * n_p * ov.inner;
      const Index dst = (o * ov.n + offset) * ov.inner;
      out.value().segment(dst, n_p * ov.inner) = p.value().segment(src, n_p * ov.inner);
    }
    offset += n_p;
  }
  bool any_grad = false;
  for (const auto& p : parts) any_grad |= p.requires_grad();
  if (Tape<S>::current() && any_grad) {
    auto parts_copy = parts;
    detail::record<S>("concat", parts, out, [parts_copy, out, ov, axis]() mutable {
      Index offset = 0;
      for (auto& p : parts_copy) {
        const Index n_p = p.dim(axis);
        if (p.requires_grad()) {
          p.ensure_grad();
          for (Index o = 0; o < ov.outer; ++o) {
            const Index dst = o * n_p * ov.inner;
            const Index src = (o * ov.n + offset) * ov.inner;
            p.mutable_grad().segment(dst, n_p * ov.inner) += out.grad().segment(src, n_p * ov.inner);
          }
        }
        offset += n_p;
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> slice(const Tensor<S>& x, Index axis, Index start, Index len) {
  axis = detail::normalize_axis(axis, x.rank());
  if (start < 0 || len <= 0 || start + len > x.dim(axis))
    throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                     ") out of bounds for axis extent " + std::to_string(x.dim(axis)));
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = len;
  Tensor<S> out(out_shape);
  const auto v = detail::axis_view(x.shape(), axis);
  for (Index o = 0; o < v.outer; ++o) {
    const Index src = (o * v.n + start) * v.inner;
    const Index dst = o * len * v.inner;
    out.value().segment(dst, len * v.inner) = x.value().segment(src, len * v.inner);
  }
  if (detail::want_grad<S>({x})) {
    detail::record<S>("slice", {x}, out, [x, out, v, axis, start, len]() mutable {
      x.ensure_grad();
      for (Index o = 0; o < v.outer; ++o) {
        const Index dst = (o * v.n + start) * v.inner;
        const Index src = o * len * v.inner;
        x.mutable_grad().segment(dst, len * v.inner) += out.grad().segment(src, len * v.inner);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul: expects rank-2 tensors, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<S> out(Shape{m, n});
  out.as_matrix(m, n).noalias() = a.as_matrix(m, k) * b.as_matrix(k, n);
  if (detail::want_grad<S>({a, b})) {
    detail::record<S>("matmul", {a, b}, out, [a, b, out, m, k, n]() mutable {
      ConstMatMap<S> g(out.grad().data(), m, n);
      if (a.requires_grad()) a.grad_matrix(m, k).noalias() += g * b.as_matrix(k, n).transpose();
      if (b.requires_grad()) b.grad_matrix(k, n).noalias() += a.as_matrix(m, k).transpose() * g;
    });
  }
  return out;
}

/// Batched matrix product over the leading dimension, with optional
/// transposition of either operand's trailing two axes.
template <typename S>
Tensor<S> bmm(const Tensor<S>& a, const Tensor<S>& b, bool trans_a = false, bool trans_b = false) {
  if (a.rank() != 3 || b.rank() != 3)
    throw ShapeError("bmm: expects rank-3 tensors");
  if (a.dim(0) != b.dim(0)) throw ShapeError("bmm: leading (batch) dimensions disagree");
  const Index L = a.dim(0);
  const Index am = trans_a ? a.dim(2) : a.dim(1);
  const Index ak = trans_a ? a.dim(1) : a.dim(2);
  const Index bk = trans_b ? b.dim(2) : b.dim(1);
  const Index bn = trans_b ? b.dim(1) : b.dim(2);
  if (ak != bk)
    throw ShapeError("bmm: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  Tensor<S> out(Shape{L, am, bn});
  const Index as = a.dim(1) * a.dim(2), bs = b.dim(1) * b.dim(2), os = am * bn;
  for (Index l = 0; l < L; ++l) {
    ConstMatMap<S> A(a.value().data() + l * as, a.dim(1), a.dim(2));
    ConstMatMap<S> B(b.value().data() + l * bs, b.dim(1), b.dim(2));
    MatMap<S> O(out.value().data() + l * os, am, bn);
    if (!trans_a && !trans_b) O.noalias() = A * B;
    else if (trans_a && !trans_b) O.noalias() = A.transpose() * B;
    else if (!trans_a && trans_b) O.noalias() = A * B.transpose();
    else O.noalias() = A.transpose() * B.transpose();
  }
  if (detail::want_grad<S>({a, b})) {
    detail::record<S>("bmm", {a, b}, out,
                      [a, b, out, L, as, bs, os, am, bn, trans_a, trans_b]() mutable {
      if (a.requires_grad()) a.ensure_grad();
      if (b.requires_grad()) b.ensure_grad();
      for (Index l = 0; l < L; ++l) {
        ConstMatMap<S> A(a.value().data() + l * as, a.dim(1), a.dim(2));
        ConstMatMap<S> B(b.value().data() + l * bs, b.dim(1), b.dim(2));
        ConstMatMap<S> G(out.grad().data() + l * os, am, bn);
        if (a.requires_grad()) {
          MatMap<S> dA(a.mutable_grad().data() + l * as, a.dim(1), a.dim(2));
          if (!trans_a && !trans_b) dA.noalias() += G * B.transpose();
          else if (!trans_a && trans_b) dA.noalias() += G * B;
          else if (trans_a && !trans_b) dA.noalias() += B * G.transpose();
          else dA.noalias() += B.transpose() * G.transpose();
        }
        if (b.requires_grad()) {
          MatMap<S> dB(b.mutable_grad().data() + l * bs, b.dim(1), b.dim(2));
          if (!trans_a && !trans_b) dB.noalias() += A.transpose() * G;
          else if (trans_a && !trans_b) dB.noalias() += A * G;
          else if (!trans_a && trans_b) dB.noalias() += G.transpose() * A;
          else dB.noalias() += G.transpose() * A.transpose();
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// activations and normalization
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  Tensor<S> out(x.shape());
  out.value() = x.value().max(S(0));
  if (detail::want_grad<S>({x})) {
    detail::record<S>("relu", {x}, out, [x, out]() mutable {
      x.accumulate_grad(out.grad() * (x.value() > S(0)).template cast<S>());
    });
  }
  return out;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  Tensor<S> out(x.shape());
  out.value() = x.value().unaryExpr([](S v) {
    return v >= S(0) ? S(1) / (S(1) + std::exp(-v)) : std::exp(v) / (S(1) + std::exp(v));
  });
  if (detail::want_grad<S>({x})) {
    detail::record<S>("sigmoid", {x}, out, [x, out]() mutable {
      const auto& y = out.value();
      x.accumulate_grad(out.grad() * y * (S(1) - y));
    });
  }
  return out;
}

template <typename S>
Tensor<S> tanh(const Tensor<S>& x) {
  Tensor<S> out(x.shape());
  out.value() = x.value().unaryExpr([](S v) { return std::tanh(v); });
  if (detail::want_grad<S>({x})) {
    detail::record<S>("tanh", {x}, out, [x, out]() mutable {
      const auto& y = out.value();
      x.accumulate_grad(out.grad() * (S(1) - y * y));
    });
  }
  return out;
}

/// Numerically stabilized softmax along `axis` (max subtraction).
template <typename S>
Tensor<S> softmax(const Tensor<S>& x, Index axis = -1) {
  const auto v = detail::axis_view(x.shape(), axis);
  Tensor<S> out(x.shape());
  const auto& xv = x.value();
  auto& ov = out.value();
  for (Index o = 0; o < v.outer; ++o) {
    for (Index j = 0; j < v.inner; ++j) {
      const Index base = o * v.n * v.inner + j;
      S m = xv(base);
      for (Index i = 1; i < v.n; ++i) m = std::max(m, xv(base + i * v.inner));
      S sum = S(0);
      for (Index i = 0; i < v.n; ++i) {
        const S e = std::exp(xv(base + i * v.inner) - m);
        ov(base + i * v.inner) = e;
        sum += e;
      }
      for (Index i = 0; i < v.n; ++i) ov(base + i * v.inner) /= sum;
    }
  }
  if (detail::want_grad<S>({x})) {
    detail::record<S>("softmax", {x}, out, [x, out, v]() mutable {
      x.ensure_grad();
      const auto& y = out.value();
      const auto& g = out.grad();
      auto& xg = x.mutable_grad();
      for (Index o = 0; o < v.outer; ++o) {
        for (Index j = 0; j < v.inner; ++j) {
          const Index base = o * v.n * v.inner + j;
          S dot = S(0);
          for (Index i = 0; i < v.n; ++i) dot += g(base + i * v.inner) * y(base + i * v.inner);
          for (Index i = 0; i < v.n; ++i) {
            const Index k = base + i * v.inner;
            xg(k) += y(k) * (g(k) - dot);
          }
        }
      }
    });
  }
  return out;
}

/// Zero-mean unit-variance normalization along `axis` (no learned affine).
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, Index axis = -1, double eps = 1e-5) {
  const auto v = detail::axis_view(x.shape(), axis);
  Tensor<S> out(x.shape());
  ArrayX<S> inv_std(v.outer * v.inner);
  const auto& xv = x.value();
  auto& ov = out.value();
  for (Index o = 0; o < v.outer; ++o) {
    for (Index j = 0; j < v.inner; ++j) {
      const Index base = o * v.n * v.inner + j;
      S mean = S(0);
      for (Index i = 0; i < v.n; ++i) mean += xv(base + i * v.inner);
      mean /= static_cast<S>(v.n);
      S var = S(0);
      for (Index i = 0; i < v.n; ++i) {
        const S d = xv(base + i * v.inner) - mean;
        var += d * d;
      }
      var /= static_cast<S>(v.n);
      const S is = S(1) / std::sqrt(var + static_cast<S>(eps));
      inv_std(o * v.inner + j) = is;
      for (Index i = 0; i < v.n; ++i) ov(base + i * v.inner) = (xv(base + i * v.inner) - mean) * is;
    }
  }
  if (detail::want_grad<S>({x})) {
    detail::record<S>("layer_norm", {x}, out, [x, out, v, inv_std]() mutable {
      x.ensure_grad();
      const auto& y = out.value();
      const auto& g = out.grad();
      auto& xg = x.mutable_grad();
      for (Index o = 0; o < v.outer; ++o) {
        for (Index j = 0; j < v.inner; ++j) {
          const Index base = o * v.n * v.inner + j;
          S gm = S(0), gym = S(0);
          for (Index i = 0; i < v.n; ++i) {
            const Index k = base + i * v.inner;
            gm += g(k);
            gym += g(k) * y(k);
          }
          gm /= static_cast<S>(v.n);
          gym /= static_cast<S>(v.n);
          const S is = inv_std(o * v.inner + j);
          for (Index i = 0; i < v.n; ++i) {
            const Index k = base + i * v.inner;
            xg(k) += is * (g(k) - gm - y(k) * gym);
          }
        }
      }
    });
  }
  return out;
}

/// Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
/// Identity in eval mode and at p = 0 (no mask is drawn in either case).
template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0)
    throw ConfigError("dropout: probability must lie in [0,1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  Tensor<S> out(x.shape());
  ArrayX<S> mask(x.size());
  const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
  for (Index i = 0; i < x.size(); ++i)
    mask(i) = rng.uniform(0.0, 1.0) < p ? S(0) : keep_scale;
  out.value() = x.value() * mask;
  if (detail::want_grad<S>({x})) {
    detail::record<S>("dropout", {x}, out,
                      [x, out, mask]() mutable { x.accumulate_grad(out.grad() * mask); });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions and loss
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  Tensor<S> out(Shape{});
  out.value()(0) = x.value().sum();
  if (detail::want_grad<S>({x})) {
    detail::record<S>("sum", {x}, out, [x, out]() mutable {
      x.accumulate_grad(ArrayX<S>::Constant(x.size(), out.grad()(0)));
    });
  }
  return out;
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  Tensor<S> out(Shape{});
  out.value()(0) = x.value().mean();
  if (detail::want_grad<S>({x})) {
    detail::record<S>("mean", {x}, out, [x, out]() mutable {
      x.accumulate_grad(ArrayX<S>::Constant(x.size(), out.grad()(0) / static_cast<S>(x.size())));
    });
  }
  return out;
}

/// Mean over the batch of -log softmax(logits)[label].
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<Index>& labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [batch, classes]");
  const Index B = logits.dim(0), K = logits.dim(1);
  if (static_cast<Index>(labels.size()) != B)
    throw ShapeError("cross_entropy: label count does not match batch size");
  for (Index n = 0; n < B; ++n)
    if (labels[static_cast<std::size_t>(n)] < 0 || labels[static_cast<std::size_t>(n)] >= K)
      throw IndexError("cross_entropy: label " + std::to_string(labels[static_cast<std::size_t>(n)]) +
                       " out of range [0," + std::to_string(K) + ")");
  Tensor<S> out(Shape{});
  ArrayX<S> probs(B * K);
  const auto& z = logits.value();
  S total = S(0);
  for (Index n = 0; n < B; ++n) {
    const Index base = n * K;
    S m = z(base);
    for (Index k = 1; k < K; ++k) m = std::max(m, z(base + k));
    S sum_exp = S(0);
    for (Index k = 0; k < K; ++k) {
      const S e = std::exp(z(base + k) - m);
      probs(base + k) = e;
      sum_exp += e;
    }
    for (Index k = 0; k < K; ++k) probs(base + k) /= sum_exp;
    const S lse = m + std::log(sum_exp);
    total += lse - z(base + labels[static_cast<std::size_t>(n)]);
  }
  out.value()(0) = total / static_cast<S>(B);
  if (detail::want_grad<S>({logits})) {
    detail::record<S>("cross_entropy", {logits}, out, [logits, out, probs, labels, B, K]() mutable {
      const S g = out.grad()(0) / static_cast<S>(B);
      logits.ensure_grad();
      auto& lg = logits.mutable_grad();
      for (Index n = 0; n < B; ++n) {
        const Index base = n * K;
        for (Index k = 0; k < K; ++k) lg(base + k) += g * probs(base + k);
        lg(base + labels[static_cast<std::size_t>(n)]) -= g;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// embedding lookup
// ---------------------------------------------------------------------------

/// Row gather: output shape is ids.shape + [d]. Backward scatters gradient
/// rows into the table, accumulating on duplicate ids.
template <typename S>
Tensor<S> embedding_lookup(const IdTensor& ids, const Tensor<S>& table) {
  if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be [vocab, dim]");
  const Index V = table.dim(0), d = table.dim(1);
  const Index N = ids.size();
  for (Index n = 0; n < N; ++n)
    if (ids.ids[static_cast<std::size_t>(n)] < 0 || ids.ids[static_cast<std::size_t>(n)] >= V)
      throw IndexError("embedding_lookup: id " +
                       std::to_string(ids.ids[static_cast<std::size_t>(n)]) + " out of range [0," +
                       std::to_string(V) + ")");
  Shape out_shape = ids.shape;
  out_shape.push_back(d);
  Tensor<S> out(out_shape);
  auto om = out.as_matrix(N, d);
  auto tm = table.as_matrix(V, d);
  for (Index n = 0; n < N; ++n) om.row(n) = tm.row(ids.ids[static_cast<std::size_t>(n)]);
  if (detail::want_grad<S>({table})) {
    auto id_list = ids.ids;
    detail::record<S>("embedding_lookup", {table}, out, [table, out, id_list, N, d]() mutable {
      auto tg = table.grad_matrix(table.dim(0), d);
      ConstMatMap<S> g(out.grad().data(), N, d);
      for (Index n = 0; n < N; ++n) tg.row(id_list[static_cast<std::size_t>(n)]) += g.row(n);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// 2-D convolution (stride 1, "same" zero padding, odd kernels only)
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
void im2col(const S* in, Index Ci, Index H, Index W, Index k, Index pad, MatrixR<S>& col) {
  // col is [Ci*k*k, H*W]
  for (Index c = 0; c < Ci; ++c) {
    for (Index di = 0; di < k; ++di) {
      for (Index dj = 0; dj < k; ++dj) {
        const Index row = (c * k + di) * k + dj;
        for (Index y = 0; y < H; ++y) {
          const Index sy = y + di - pad;
          for (Index x = 0; x < W; ++x) {
            const Index sx = x + dj - pad;
            col(row, y * W + x) = (sy >= 0 && sy < H && sx >= 0 && sx < W)
                                      ? in[(c * H + sy) * W + sx]
                                      : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im_add(const MatrixR<S>& col, Index Ci, Index H, Index W, Index k, Index pad, S* out) {
  for (Index c = 0; c < Ci; ++c) {
    for (Index di = 0; di < k; ++di) {
      for (Index dj = 0; dj < k; ++dj) {
        const Index row = (c * k + di) * k + dj;
        for (Index y = 0; y < H; ++y) {
          const Index sy = y + di - pad;
          if (sy < 0 || sy >= H) continue;
          for (Index x = 0; x < W; ++x) {
            const Index sx = x + dj - pad;
            if (sx < 0 || sx >= W) continue;
            out[(c * H + sy) * W + sx] += col(row, y * W + x);
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Cross-correlation of [B,Ci,H,W] with [Co,Ci,k,k] plus per-channel bias.
/// Only the Table-2 configuration is supported: odd k, padding (k-1)/2,
/// stride 1, so spatial dimensions are preserved.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& kernel, const Tensor<S>& bias,
                 Index padding) {
  if (input.rank() != 4) throw ShapeError("conv2d: input must be [B,C,H,W]");
  if (kernel.rank() != 4) throw ShapeError("conv2d: kernel must be [Co,Ci,k,k]");
  const Index B = input.dim(0), Ci = input.dim(1), H = input.dim(2), W = input.dim(3);
  const Index Co = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != Ci)
    throw ShapeError("conv2d: kernel input channels " + std::to_string(kernel.dim(1)) +
                     " do not match input channels " + std::to_string(Ci));
  if (kernel.dim(3) != k) throw ShapeError("conv2d: kernel must be square");
  if (k % 2 == 0) throw ConfigError("conv2d: even kernel size " + std::to_string(k) + " unsupported");
  if (padding != (k - 1) / 2)
    throw ConfigError("conv2d: padding " + std::to_string(padding) + " must equal (k-1)/2 = " +
                      std::to_string((k - 1) / 2));
  if (bias.rank() != 1 || bias.dim(0) != Co)
    throw ShapeError("conv2d: bias must be [Co]");

  Tensor<S> out(Shape{B, Co, H, W});
  const Index patch = Ci * k * k, hw = H * W;
  MatrixR<S> col(patch, hw);
  ConstMatMap<S> Wm(kernel.value().data(), Co, patch);
  for (Index s = 0; s < B; ++s) {
    detail::im2col(input.value().data() + s * Ci * hw, Ci, H, W, k, padding, col);
    MatMap<S> O(out.value().data() + s * Co * hw, Co, hw);
    O.noalias() = Wm * col;
    O.colwise() += bias.value().matrix();
  }
  if (detail::want_grad<S>({input, kernel, bias})) {
    detail::record<S>("conv2d", {input, kernel, bias}, out,
                      [input, kernel, bias, out, B, Ci, Co, H, W, k, padding, patch, hw]() mutable {
      MatrixR<S> col(patch, hw);
      ConstMatMap<S> Wm(kernel.value().data(), Co, patch);
      if (input.requires_grad()) input.ensure_grad();
      if (kernel.requires_grad()) kernel.ensure_grad();
      if (bias.requires_grad()) bias.ensure_grad();
      for (Index s = 0; s < B; ++s) {
        ConstMatMap<S> G(out.grad().data() + s * Co * hw, Co, hw);
        if (kernel.requires_grad() || input.requires_grad())
          detail::im2col(input.value().data() + s * Ci * hw, Ci, H, W, k, padding, col);
        if (kernel.requires_grad()) {
          MatMap<S> dW(kernel.mutable_grad().data(), Co, patch);
          dW.noalias() += G * col.transpose();
        }
        if (bias.requires_grad()) bias.mutable_grad().matrix() += G.rowwise().sum();
        if (input.requires_grad()) {
          MatrixR<S> dcol = Wm.transpose() * G;
          detail::col2im_add(dcol, Ci, H, W, k, padding, input.mutable_grad().data() + s * Ci * hw);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gram-matrix permutation (simultaneous row/column reindexing)
// ---------------------------------------------------------------------------

/// out[..,i,j] = g[..,perm[i],perm[j]] on the trailing two (square) axes.
template <typename S>
Tensor<S> permute_gram(const Tensor<S>& g, const std::vector<Index>& perm) {
  if (g.rank() < 2) throw ShapeError("permute_gram: needs at least rank 2");
  const Index F = g.dim(g.rank() - 1);
  if (g.dim(g.rank() - 2) != F) throw ShapeError("permute_gram: trailing axes must be square");
  if (static_cast<Index>(perm.size()) != F)
    throw ShapeError("permute_gram: permutation size does not match matrix size");
  std::vector<bool> seen(static_cast<std::size_t>(F), false);
  for (Index p : perm) {
    if (p < 0 || p >= F || seen[static_cast<std::size_t>(p)])
      throw ShapeError("permute_gram: invalid permutation");
    seen[static_cast<std::size_t>(p)] = true;
  }
  Tensor<S> out(g.shape());
  const Index batch = g.size() / (F * F);
  for (Index b = 0; b < batch; ++b) {
    const Index base = b * F * F;
    for (Index i = 0; i < F; ++i)
      for (Index j = 0; j < F; ++j)
        out.value()(base + i * F + j) =
            g.value()(base + perm[static_cast<std::size_t>(i)] * F +
                      perm[static_cast<std::size_t>(j)]);
  }
  if (detail::want_grad<S>({g})) {
    detail::record<S>("permute_gram", {g}, out, [g, out, perm, F, batch]() mutable {
      g.ensure_grad();
      for (Index b = 0; b < batch; ++b) {
        const Index base = b * F * F;
        for (Index i = 0; i < F; ++i)
          for (Index j = 0; j < F; ++j)
            g.mutable_grad()(base + perm[static_cast<std::size_t>(i)] * F +
                     perm[static_cast<std::size_t>(j)]) += out.grad()(base + i * F + j);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// small utilities
// ---------------------------------------------------------------------------

template <typename S>
std::vector<Index> argmax_rows(const Tensor<S>& logits) {
  if (logits.rank() != 2) throw ShapeError("argmax_rows: expects [batch, classes]");
  const Index B = logits.dim(0), K = logits.dim(1);
  std::vector<Index> out(static_cast<std::size_t>(B));
  for (Index n = 0; n < B; ++n) {
    Index best = 0;
    for (Index k = 1; k < K; ++k)
      if (logits.value()(n * K + k) > logits.value()(n * K + best)) best = k;
    out[static_cast<std::size_t>(n)] = best;
  }
  return out;
}

template <typename S>
void assert_all_finite(const Tensor<S>& t, const std::string& context) {
  if (!t.all_finite()) throw NumericsError(context + ": non-finite values encountered");
}

}  // namespace teapcr
