#pragma once

#include <vector>

#include "teapcr/tensor.hpp"

namespace teapcr {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moment buffers shape-match their parameters;
/// the step counter is shared and strictly increasing.
template <typename S>
class Adam {
 public:
  Adam(std::vector<Tensor<S>> params, AdamConfig cfg = {})
      : cfg_(cfg), params_(std::move(params)) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.push_back(ArrayX<S>::Zero(p.size()));
      v_.push_back(ArrayX<S>::Zero(p.size()));
    }
  }

  void step() {
    ++t_;
    const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
    const S c1 = S(1) - static_cast<S>(std::pow(cfg_.beta1, t_));
    const S c2 = S(1) - static_cast<S>(std::pow(cfg_.beta2, t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      // absent gradient buffer == zero gradient
      const ArrayX<S> g = p.has_grad() ? p.grad() : ArrayX<S>::Zero(p.size());
      m_[i] = b1 * m_[i] + (S(1) - b1) * g;
      v_[i] = b2 * v_[i] + (S(1) - b2) * g * g;
      p.value() -= static_cast<S>(cfg_.lr) * (m_[i] / c1) /
                   ((v_[i] / c2).sqrt() + static_cast<S>(cfg_.epsilon));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  long step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor<S>> params_;
  std::vector<ArrayX<S>> m_, v_;
  long t_ = 0;
};

}  // namespace teapcr
