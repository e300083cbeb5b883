#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "teapcr/ops.hpp"
#include "teapcr/optim.hpp"

namespace teapcr {

/// Named parameter registry; the checkpoint format and the optimizer both
/// walk models through this.
template <typename S>
struct ParamMap {
  std::vector<std::pair<std::string, Tensor<S>>> entries;

  void add(const std::string& name, const Tensor<S>& t) { entries.emplace_back(name, t); }

  std::vector<Tensor<S>> tensors() const {
    std::vector<Tensor<S>> out;
    out.reserve(entries.size());
    for (const auto& [_, t] : entries) out.push_back(t);
    return out;
  }

  const Tensor<S>* find(const std::string& name) const {
    for (const auto& [n, t] : entries)
      if (n == name) return &t;
    return nullptr;
  }
};

/// Kaiming-uniform fan-in initialization, U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
template <typename S>
Tensor<S> kaiming_uniform(Shape shape, Index fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  return Tensor<S>::uniform(std::move(shape), rng, -bound, bound, true);
}

template <typename S>
struct Linear {
  Tensor<S> w;  // [in, out]
  Tensor<S> b;  // [out]

  Linear() = default;
  Linear(Index in, Index out, Rng& rng)
      : w(kaiming_uniform<S>({in, out}, in, rng)), b(Tensor<S>::zeros({out}, true)) {}

  Tensor<S> forward(const Tensor<S>& x) const { return add_broadcast(matmul(x, w), b); }

  void collect(const std::string& prefix, ParamMap<S>& params) const {
    params.add(prefix + ".w", w);
    params.add(prefix + ".b", b);
  }
};

template <typename S>
struct Conv2d {
  Tensor<S> w;  // [out_channels, in_channels, k, k]
  Tensor<S> b;  // [out_channels]
  Index pad = 0;

  Conv2d() = default;
  Conv2d(Index in_ch, Index out_ch, Index k, Rng& rng)
      : w(kaiming_uniform<S>({out_ch, in_ch, k, k}, in_ch * k * k, rng)),
        b(Tensor<S>::zeros({out_ch}, true)),
        pad((k - 1) / 2) {}

  Tensor<S> forward(const Tensor<S>& x) const { return conv2d(x, w, b, pad); }

  void collect(const std::string& prefix, ParamMap<S>& params) const {
    params.add(prefix + ".w", w);
    params.add(prefix + ".b", b);
  }
};

/// conv(1->4, k5) -> relu -> conv(4->2, k3) -> relu -> flatten -> linear head.
/// Operates on square [B, side, side] maps (Gram matrices).
template <typename S>
struct CnnBranch {
  Conv2d<S> conv1, conv2;
  Linear<S> head;
  Index side = 0;

  CnnBranch() = default;
  CnnBranch(Index side_, Index classes, Rng& rng)
      : conv1(1, 4, 5, rng), conv2(4, 2, 3, rng), head(2 * side_ * side_, classes, rng),
        side(side_) {}

  Tensor<S> forward(const Tensor<S>& maps) const {
    if (maps.rank() != 3 || maps.dim(1) != side || maps.dim(2) != side)
      throw ShapeError("CnnBranch: expected [B," + std::to_string(side) + "," +
                       std::to_string(side) + "], got " + shape_str(maps.shape()));
    const Index B = maps.dim(0);
    auto x = reshape(maps, {B, 1, side, side});
    x = relu(conv1.forward(x));
    x = relu(conv2.forward(x));
    return head.forward(reshape(x, {B, 2 * side * side}));
  }

  void collect(const std::string& prefix, ParamMap<S>& params) const {
    conv1.collect(prefix + ".conv1", params);
    conv2.collect(prefix + ".conv2", params);
    head.collect(prefix + ".head", params);
  }
};

/// linear (in -> hidden) -> relu -> dropout -> linear (hidden -> classes).
template <typename S>
struct MlpBranch {
  Linear<S> l1, l2;
  double dropout_p = 0.5;

  MlpBranch() = default;
  MlpBranch(Index in, Index hidden, Index classes, double p, Rng& rng)
      : l1(in, hidden, rng), l2(hidden, classes, rng), dropout_p(p) {}

  Tensor<S> forward(const Tensor<S>& x, bool training, Rng& rng) const {
    return l2.forward(dropout(relu(l1.forward(x)), dropout_p, training, rng));
  }

  void collect(const std::string& prefix, ParamMap<S>& params) const {
    l1.collect(prefix + ".l1", params);
    l2.collect(prefix + ".l2", params);
  }
};

/// Attention probability maps captured during a forward pass, one
/// [B*h, W, W] tensor per layer.
template <typename S>
using AttentionTrace = std::vector<Tensor<S>>;

template <typename S>
struct MultiHeadAttention {
  Linear<S> wq, wk, wv, wo;
  Index heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(Index d, Index h, Rng& rng)
      : wq(d, d, rng), wk(d, d, rng), wv(d, d, rng), wo(d, d, rng), heads(h) {
    if (d % h != 0) throw ConfigError("attention: model dim must be divisible by head count");
  }

  /// softmax(Q K^T / sqrt(d/h)) V per head, no causal mask.
  Tensor<S> forward(const Tensor<S>& x, AttentionTrace<S>* trace = nullptr) const {
    const Index B = x.dim(0), W = x.dim(1), d = x.dim(2);
    const Index dh = d / heads;
    auto flat = reshape(x, {B * W, d});
    auto split = [&](const Tensor<S>& t) {
      return reshape(permute_axes(reshape(t, {B, W, heads, dh}), {0, 2, 1, 3}), {B * heads, W, dh});
    };
    auto q = split(wq.forward(flat));
    auto k = split(wk.forward(flat));
    auto v = split(wv.forward(flat));
    auto scores = mul_const(bmm(q, k, false, true), 1.0 / std::sqrt(static_cast<double>(dh)));
    auto att = softmax(scores, -1);
    if (trace) trace->push_back(att);
    auto ctx = bmm(att, v);
    auto merged = reshape(permute_axes(reshape(ctx, {B, heads, W, dh}), {0, 2, 1, 3}), {B * W, d});
    return reshape(wo.forward(merged), {B, W, d});
  }

  void collect(const std::string& prefix, ParamMap<S>& params) const {
    wq.collect(prefix + ".wq", params);
    wk.collect(prefix + ".wk", params);
    wv.collect(prefix + ".wv", params);
    wo.collect(prefix + ".wo", params);
  }
};

/// Pre-norm transformer block: x + MHSA(LN(x)), then x + FFN(LN(x)),
/// feed-forward d -> 4d -> d with relu.
template <typename S>
struct TransformerBlock {
  MultiHeadAttention<S> attn;
  Linear<S> ff1, ff2;

  TransformerBlock() = default;
  TransformerBlock(Index d, Index h, Rng& rng)
      : attn(d, h, rng), ff1(d, 4 * d, rng), ff2(4 * d, d, rng) {}

  Tensor<S> forward(const Tensor<S>& x, AttentionTrace<S>* trace = nullptr) const {
    const Index B = x.dim(0), W = x.dim(1), d = x.dim(2);
    auto h1 = add(x, attn.forward(layer_norm(x, -1), trace));
    auto ff = ff2.forward(relu(ff1.forward(reshape(layer_norm(h1, -1), {B * W, d}))));
    return add(h1, reshape(ff, {B, W, d}));
  }

  void collect(const std::string& prefix, ParamMap<S>& params) const {
    attn.collect(prefix + ".attn", params);
    ff1.collect(prefix + ".ff1", params);
    ff2.collect(prefix + ".ff2", params);
  }
};

/// Single-layer LSTM cell, gate order (input, forget, cell, output),
/// zero initial state.
template <typename S>
struct LstmCell {
  Tensor<S> w_ih;  // [in, 4*hidden]
  Tensor<S> w_hh;  // [hidden, 4*hidden]
  Tensor<S> b;     // [4*hidden]
  Index hidden = 0;

  LstmCell() = default;
  LstmCell(Index in, Index hidden_, Rng& rng)
      : w_ih(kaiming_uniform<S>({in, 4 * hidden_}, in, rng)),
        w_hh(kaiming_uniform<S>({hidden_, 4 * hidden_}, hidden_, rng)),
        b(Tensor<S>::zeros({4 * hidden_}, true)),
        hidden(hidden_) {}

  std::pair<Tensor<S>, Tensor<S>> step(const Tensor<S>& x, const Tensor<S>& h,
                                       const Tensor<S>& c) const {
    auto gates = add_broadcast(add(matmul(x, w_ih), matmul(h, w_hh)), b);
    auto i = sigmoid(slice(gates, 1, 0, hidden));
    auto f = sigmoid(slice(gates, 1, hidden, hidden));
    auto g = teapcr::tanh(slice(gates, 1, 2 * hidden, hidden));
    auto o = sigmoid(slice(gates, 1, 3 * hidden, hidden));
    auto c_next = add(mul(f, c), mul(i, g));
    auto h_next = mul(o, teapcr::tanh(c_next));
    return {h_next, c_next};
  }

  void collect(const std::string& prefix, ParamMap<S>& params) const {
    params.add(prefix + ".w_ih", w_ih);
    params.add(prefix + ".w_hh", w_hh);
    params.add(prefix + ".b", b);
  }
};

/// Fixed sinusoidal positional table [W, d]; not trainable.
template <typename S>
Tensor<S> sinusoidal_positions(Index w, Index d) {
  Tensor<S> pos({w, d});
  for (Index t = 0; t < w; ++t) {
    for (Index j = 0; j < d; ++j) {
      const double rate = std::pow(10000.0, static_cast<double>(2 * (j / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(t) / rate;
      pos.value()(t * d + j) = static_cast<S>(j % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pos;
}

}  // namespace teapcr
