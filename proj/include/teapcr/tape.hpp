#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "teapcr/errors.hpp"
#include "teapcr/tensor.hpp"

namespace teapcr {

/// One recorded forward op. The closure owns whatever context the backward
/// rule needs (saved inputs, masks, permutations) and accumulates into the
/// input gradients when invoked.
template <typename S>
struct TapeNode {
  const char* op;
  std::vector<Tensor<S>> inputs;
  Tensor<S> output;
  std::function<void()> backward;
};

/// Append-only record of the forward computation, in topological order.
/// Constructing a Tape makes it the active tape for the current thread;
/// destruction restores the previous one. Ops record onto the active tape
/// whenever any input requires gradients.
template <typename S>
class Tape {
 public:
  Tape() : prev_(current_) { current_ = this; }
  ~Tape() { current_ = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() { return current_; }

  void record(const char* op, std::vector<Tensor<S>> inputs, Tensor<S> output,
              std::function<void()> backward_fn) {
    nodes_.push_back(TapeNode<S>{op, std::move(inputs), std::move(output), std::move(backward_fn)});
  }

  std::size_t size() const { return nodes_.size(); }
  const TapeNode<S>& node(std::size_t i) const { return nodes_[i]; }

  /// Reverse traversal in exact reverse append order; each node visited once.
  /// Nodes whose output never received a gradient are off the path to the
  /// loss and are skipped.
  void backward(Tensor<S> loss) {
    if (!loss.is_scalar())
      throw UsageError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad())
      throw UsageError("backward: loss was not produced by recorded differentiable ops");
    loss.ensure_grad();
    loss.mutable_grad()(0) += S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->output.has_grad()) it->backward();
    }
  }

  void clear() { nodes_.clear(); }

 private:
  std::vector<TapeNode<S>> nodes_;
  Tape* prev_ = nullptr;
  static thread_local Tape* current_;
};

template <typename S>
thread_local Tape<S>* Tape<S>::current_ = nullptr;

/// Free-function form; requires an active tape on this thread.
template <typename S>
void backward(const Tensor<S>& loss) {
  Tape<S>* t = Tape<S>::current();
  if (!t) throw UsageError("backward: no active tape on this thread");
  t->backward(loss);
}

}  // namespace teapcr
