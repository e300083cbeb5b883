#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "teapcr/eapcr.hpp"
#include "teapcr/nn.hpp"
#include "teapcr/ops.hpp"

namespace teapcr {

enum class SeqEncoder { transformer, lstm };

struct TapcrConfig {
  Index window = 0;         // W
  Index cont_features = 0;  // continuous inputs per step
  Index cat_features = 0;   // categorical inputs per step
  Index cat_vocab_size = 0; // tokens across all categorical features (+unknowns)
  Index embed_dim = 128;    // d
  Index heads = 4;          // h
  Index layers = 2;         // L transformer blocks
  Index classes = 0;        // K
  std::uint64_t perm_seed = 0;
  double dropout = 0.5;
  SeqEncoder encoder = SeqEncoder::transformer;

  void validate() const {
    if (window < 1) throw ConfigError("TapcrConfig: window must be >= 1");
    if (cont_features + cat_features < 1) throw ConfigError("TapcrConfig: no input features");
    if (cat_features > 0 && cat_vocab_size < 1)
      throw ConfigError("TapcrConfig: categorical features need a vocabulary");
    if (embed_dim < 1) throw ConfigError("TapcrConfig: embed_dim must be >= 1");
    if (embed_dim % heads != 0)
      throw ConfigError("TapcrConfig: embed_dim must be divisible by heads");
    if (layers < 1) throw ConfigError("TapcrConfig: layers must be >= 1");
    if (classes < 2) throw ConfigError("TapcrConfig: classes must be >= 2");
  }
};

/// Per-step inputs for the temporal module: z-scored continuous values plus
/// one token tensor per categorical feature (ID encoding applies only when
/// the data contain categorical variables).
template <typename S>
struct WindowInputs {
  Tensor<S> continuous;               // [B, W, Fc]; undefined when Fc = 0
  std::vector<IdTensor> categorical;  // each [B, W]

  Index batch() const {
    return continuous.defined() ? continuous.dim(0) : categorical.at(0).dim(0);
  }
  Index window() const {
    return continuous.defined() ? continuous.dim(1) : categorical.at(0).dim(1);
  }
};

/// The temporal module: per-step encoding, a sequence encoder (transformer,
/// or LSTM for the ablation variant), the temporal Gram/permutation/CNN path
/// over the window, an MLP path, and learned weighted-sum fusion.
template <typename S>
struct TapcrModel {
  TapcrConfig cfg;
  Linear<S> input_proj;     // [Fc -> d]
  Tensor<S> cat_embedding;  // [V_cat, d]
  Tensor<S> positions;      // [W, d] sinusoidal, fixed
  std::vector<TransformerBlock<S>> blocks;
  LstmCell<S> lstm;
  std::vector<Index> perm_t;  // fixed permutation over time steps
  CnnBranch<S> cnn1, cnn2;
  MlpBranch<S> mlp;
  Tensor<S> w_cnn1, w_cnn2, w_mlp;

  TapcrModel() = default;

  TapcrModel(const TapcrConfig& config, Rng& rng) : cfg(config) {
    cfg.validate();
    const Index d = cfg.embed_dim, W = cfg.window, K = cfg.classes;
    if (cfg.cont_features > 0) input_proj = Linear<S>(cfg.cont_features, d, rng);
    if (cfg.cat_features > 0)
      cat_embedding = Tensor<S>::normal({cfg.cat_vocab_size, d}, rng, 0.0,
                                        1.0 / std::sqrt(static_cast<double>(d)), true);
    positions = sinusoidal_positions<S>(W, d);
    if (cfg.encoder == SeqEncoder::transformer) {
      blocks.reserve(static_cast<std::size_t>(cfg.layers));
      for (Index l = 0; l < cfg.layers; ++l) blocks.emplace_back(d, cfg.heads, rng);
    } else {
      lstm = LstmCell<S>(d, d, rng);
    }
    perm_t = fixed_permutation(W, cfg.perm_seed);
    cnn1 = CnnBranch<S>(W, K, rng);
    cnn2 = CnnBranch<S>(W, K, rng);
    mlp = MlpBranch<S>(W * d, W * 32, K, cfg.dropout, rng);
    w_cnn1 = Tensor<S>::scalar(S(1), true);
    w_cnn2 = Tensor<S>::scalar(S(1), true);
    w_mlp = Tensor<S>::scalar(S(1), true);
  }

  /// S[t] = linear(continuous x_t) + sum of categorical token embeddings
  ///        + positional[t].
  Tensor<S> encode_steps(const WindowInputs<S>& in) const {
    const Index B = in.batch(), W = in.window(), d = cfg.embed_dim;
    if (W != cfg.window)
      throw ShapeError("encode_steps: window length " + std::to_string(W) + " != configured " +
                       std::to_string(cfg.window));
    Tensor<S> enc;
    if (cfg.cont_features > 0) {
      if (!in.continuous.defined() || in.continuous.dim(2) != cfg.cont_features)
        throw ShapeError("encode_steps: continuous input arity mismatch");
      enc = reshape(input_proj.forward(reshape(in.continuous, {B * W, cfg.cont_features})),
                    {B, W, d});
    } else {
      enc = Tensor<S>::zeros({B, W, d});
    }
    if (static_cast<Index>(in.categorical.size()) != cfg.cat_features)
      throw ShapeError("encode_steps: expected " + std::to_string(cfg.cat_features) +
                       " categorical token tensors");
    for (const auto& ids : in.categorical) enc = add(enc, embedding_lookup(ids, cat_embedding));
    return add_broadcast(enc, positions);
  }

  Tensor<S> transformer_encode(const Tensor<S>& steps, AttentionTrace<S>* trace = nullptr) const {
    auto h = steps;
    for (const auto& block : blocks) h = block.forward(h, trace);
    return h;
  }

  /// Standard LSTM recurrence over t = 0..W-1 from a zero initial state;
  /// row t of the result is the hidden state at step t.
  Tensor<S> lstm_encode(const Tensor<S>& steps) const {
    const Index B = steps.dim(0), W = steps.dim(1), d = steps.dim(2);
    auto h = Tensor<S>::zeros({B, d});
    auto c = Tensor<S>::zeros({B, d});
    std::vector<Tensor<S>> outputs;
    outputs.reserve(static_cast<std::size_t>(W));
    for (Index t = 0; t < W; ++t) {
      auto x_t = reshape(slice(steps, 1, t, 1), {B, d});
      auto [h_next, c_next] = lstm.step(x_t, h, c);
      h = h_next;
      c = c_next;
      outputs.push_back(reshape(h, {B, 1, d}));
    }
    return outputs.size() == 1 ? outputs.front() : concat(outputs, 1);
  }

  Tensor<S> encode(const Tensor<S>& steps, AttentionTrace<S>* trace = nullptr) const {
    return cfg.encoder == SeqEncoder::lstm ? lstm_encode(steps) : transformer_encode(steps, trace);
  }

  /// The W x W temporal Gram map and its permuted twin, each through its own
  /// CNN branch.
  std::pair<Tensor<S>, Tensor<S>> temporal_gram_path(const Tensor<S>& hidden) const {
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
    auto gram = mul_const(bmm(hidden, hidden, false, true), scale);  // [B, W, W]
    auto gram_p = permute_gram(gram, perm_t);
    return {cnn1.forward(gram), cnn2.forward(gram_p)};
  }

  Tensor<S> forward(const WindowInputs<S>& in, bool training, Rng& rng,
                    AttentionTrace<S>* trace = nullptr) const {
    const Index B = in.batch(), W = cfg.window, d = cfg.embed_dim;
    auto hidden = encode(encode_steps(in), trace);
    auto [logits_cnn1, logits_cnn2] = temporal_gram_path(hidden);
    auto logits_mlp = mlp.forward(reshape(hidden, {B, W * d}), training, rng);
    return add(add(scale_by(logits_cnn1, w_cnn1), scale_by(logits_cnn2, w_cnn2)),
               scale_by(logits_mlp, w_mlp));
  }

  void collect(const std::string& prefix, ParamMap<S>& params) const {
    if (cfg.cont_features > 0) input_proj.collect(prefix + "proj", params);
    if (cfg.cat_features > 0) params.add(prefix + "cat_embedding", cat_embedding);
    for (std::size_t l = 0; l < blocks.size(); ++l)
      blocks[l].collect(prefix + "block" + std::to_string(l), params);
    if (cfg.encoder == SeqEncoder::lstm) lstm.collect(prefix + "lstm", params);
    cnn1.collect(prefix + "cnn1", params);
    cnn2.collect(prefix + "cnn2", params);
    mlp.collect(prefix + "mlp", params);
    params.add(prefix + "w_cnn1", w_cnn1);
    params.add(prefix + "w_cnn2", w_cnn2);
    params.add(prefix + "w_mlp", w_mlp);
  }
};

/// EAPCR on the window's final step fused with the temporal module by a
/// learned weighted sum. With a transformer encoder this is the full model;
/// with the LSTM encoder it is the ablation variant.
template <typename S>
struct TimeEapcrTModel {
  EapcrModel<S> eapcr;
  TapcrModel<S> tapcr;
  Tensor<S> alpha_eapcr, alpha_tapcr;

  TimeEapcrTModel() = default;

  TimeEapcrTModel(const EapcrConfig& ecfg, const TapcrConfig& tcfg, Rng& rng)
      : eapcr(ecfg, rng), tapcr(tcfg, rng) {
    if (ecfg.classes != tcfg.classes)
      throw ConfigError("TimeEapcrTModel: submodels disagree on the class count");
    alpha_eapcr = Tensor<S>::scalar(S(1), true);
    alpha_tapcr = Tensor<S>::scalar(S(1), true);
  }

  /// last_step_tokens: EAPCR vocabulary ids of the window's final time step.
  Tensor<S> forward(const IdTensor& last_step_tokens, const WindowInputs<S>& window,
                    bool training, Rng& rng, AttentionTrace<S>* trace = nullptr) const {
    auto le = eapcr.forward(last_step_tokens, training, rng);
    auto lt = tapcr.forward(window, training, rng, trace);
    return add(scale_by(le, alpha_eapcr), scale_by(lt, alpha_tapcr));
  }

  void collect(const std::string& prefix, ParamMap<S>& params) const {
    eapcr.collect(prefix + "eapcr.", params);
    tapcr.collect(prefix + "tapcr.", params);
    params.add(prefix + "alpha_eapcr", alpha_eapcr);
    params.add(prefix + "alpha_tapcr", alpha_tapcr);
  }
};

}  // namespace teapcr
