#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "teapcr/nn.hpp"
#include "teapcr/ops.hpp"

namespace teapcr {

/// Draws a fixed uniformly-random permutation of {0..n-1} from a seed.
/// Architectural layer, shared across all samples and epochs.
inline std::vector<Index> fixed_permutation(Index n, std::uint64_t seed) {
  std::vector<Index> perm(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  for (Index i = n - 1; i > 0; --i) {
    const Index j = rng.uniform_int(0, i);
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  return perm;
}

/// G = E A E^T / sqrt(d). With A = I this is the plain scaled Gram matrix.
/// Accepts a single [F,d] matrix or a batch [B,F,d].
template <typename S>
Tensor<S> bilinear_gram(const Tensor<S>& e, const Tensor<S>& a) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1))
    throw ShapeError("bilinear_gram: A must be square [d,d]");
  const Index d = a.dim(0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  if (e.rank() == 2) {
    if (e.dim(1) != d) throw ShapeError("bilinear_gram: E columns must match A");
    return mul_const(matmul(matmul(e, a), permute_axes(e, {1, 0})), scale);
  }
  if (e.rank() != 3 || e.dim(2) != d)
    throw ShapeError("bilinear_gram: E must be [F,d] or [B,F,d] with d matching A");
  const Index B = e.dim(0), F = e.dim(1);
  auto ea = reshape(matmul(reshape(e, {B * F, d}), a), {B, F, d});
  return mul_const(bmm(ea, e, false, true), scale);
}

struct EapcrConfig {
  Index features = 0;    // F
  Index embed_dim = 128; // d
  Index vocab_size = 0;  // V, from the built vocab
  Index classes = 0;     // K
  std::uint64_t perm_seed = 0;
  double dropout = 0.5;

  void validate() const {
    if (features < 1) throw ConfigError("EapcrConfig: features must be >= 1");
    if (embed_dim < 1) throw ConfigError("EapcrConfig: embed_dim must be >= 1");
    if (classes < 2) throw ConfigError("EapcrConfig: classes must be >= 2");
    if (vocab_size < 1) throw ConfigError("EapcrConfig: vocab_size must be >= 1");
  }
};

/// The per-time-step network: embedding of tokenized features, bilinear
/// Gram attention map, fixed permutation expansion, two CNN branches, a
/// residual MLP branch, and a learned weighted sum of the branch logits.
template <typename S>
struct EapcrModel {
  EapcrConfig cfg;
  Tensor<S> embedding;  // [V, d]
  Tensor<S> bilinear;   // [d, d], starts at the identity (plain Gram matrix)
  std::vector<Index> perm;
  CnnBranch<S> cnn1, cnn2;
  MlpBranch<S> mlp;
  Tensor<S> w_cnn1, w_cnn2, w_mlp;  // fusion weights, start at 1

  EapcrModel() = default;

  EapcrModel(const EapcrConfig& config, Rng& rng) : cfg(config) {
    cfg.validate();
    const Index d = cfg.embed_dim, F = cfg.features, K = cfg.classes;
    embedding = Tensor<S>::normal({cfg.vocab_size, d}, rng, 0.0,
                                  1.0 / std::sqrt(static_cast<double>(d)), true);
    bilinear = Tensor<S>::zeros({d, d}, true);
    for (Index i = 0; i < d; ++i) bilinear.value()(i * d + i) = S(1);
    perm = fixed_permutation(F, cfg.perm_seed);
    cnn1 = CnnBranch<S>(F, K, rng);
    cnn2 = CnnBranch<S>(F, K, rng);
    mlp = MlpBranch<S>(F * d, F * 32, K, cfg.dropout, rng);
    w_cnn1 = Tensor<S>::scalar(S(1), true);
    w_cnn2 = Tensor<S>::scalar(S(1), true);
    w_mlp = Tensor<S>::scalar(S(1), true);
  }

  /// tokens: [B, F] vocabulary ids -> logits [B, K].
  Tensor<S> forward(const IdTensor& tokens, bool training, Rng& rng) const {
    if (tokens.shape.size() != 2 || tokens.dim(1) != cfg.features)
      throw ShapeError("EapcrModel::forward: tokens must be [B," +
                       std::to_string(cfg.features) + "]");
    const Index B = tokens.dim(0), F = cfg.features, d = cfg.embed_dim;
    auto e = embedding_lookup(tokens, embedding);  // [B, F, d]
    auto gram = bilinear_gram(e, bilinear);        // [B, F, F]
    auto gram_p = permute_gram(gram, perm);
    auto logits_cnn1 = cnn1.forward(gram);
    auto logits_cnn2 = cnn2.forward(gram_p);
    auto logits_mlp = mlp.forward(reshape(e, {B, F * d}), training, rng);
    return add(add(scale_by(logits_cnn1, w_cnn1), scale_by(logits_cnn2, w_cnn2)),
               scale_by(logits_mlp, w_mlp));
  }

  void collect(const std::string& prefix, ParamMap<S>& params) const {
    params.add(prefix + "embedding", embedding);
    params.add(prefix + "bilinear", bilinear);
    cnn1.collect(prefix + "cnn1", params);
    cnn2.collect(prefix + "cnn2", params);
    mlp.collect(prefix + "mlp", params);
    params.add(prefix + "w_cnn1", w_cnn1);
    params.add(prefix + "w_cnn2", w_cnn2);
    params.add(prefix + "w_mlp", w_mlp);
  }
};

}  // namespace teapcr
