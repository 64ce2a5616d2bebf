#pragma once

#include <cmath>
#include <vector>

#include "aslsr/autodiff.hpp"

namespace aslsr::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a fixed list of leaf variables; state arrays match the
/// parameter order.
template <class S>
class Adam {
 public:
  using Array = typename ad::Tensor<S>::Array;

  Adam(std::vector<ad::Var<S>> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    if (!(cfg_.lr > 0)) throw ConfigError("adam: lr must be positive");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.push_back(Array::Zero(p->value.size()));
      v_.push_back(Array::Zero(p->value.size()));
    }
  }

  double lr() const { return cfg_.lr; }
  void set_lr(double lr) { cfg_.lr = lr; }

  void step(const std::vector<ad::Var<S>>& grads) {
    if (grads.size() != params_.size())
      throw ConfigError("adam: gradient count mismatch");
    ++t_;
    const S c1 = S(1.0 - std::pow(cfg_.beta1, double(t_)));
    const S c2 = S(1.0 - std::pow(cfg_.beta2, double(t_)));
    const S b1 = S(cfg_.beta1), b2 = S(cfg_.beta2);
    const S lr = S(cfg_.lr), eps = S(cfg_.eps);
    for (size_t i = 0; i < params_.size(); ++i) {
      const auto& g = grads[i]->value.data;
      if (g.size() != params_[i]->value.size())
        throw GeometryError("adam: gradient shape mismatch at parameter " + std::to_string(i));
      m_[i] = b1 * m_[i] + (S(1) - b1) * g;
      v_[i] = b2 * v_[i] + (S(1) - b2) * g.square();
      params_[i]->value.data -= lr * (m_[i] / c1) / ((v_[i] / c2).sqrt() + eps);
    }
  }

 private:
  std::vector<ad::Var<S>> params_;
  AdamConfig cfg_;
  std::vector<Array> m_, v_;
  long t_ = 0;
};

}  // namespace aslsr::nn
