#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "memnav/autodiff/tensor.hpp"

namespace memnav::ad {

enum class OptimizerKind { kSgdMomentum, kRmsprop };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgdMomentum;
  double learning_rate = 0.1;
  double momentum = 0.9;      // SGD momentum
  double alpha = 0.98;        // RMSprop smoothing
  double epsilon = 1e-5;      // RMSprop, added under the square root
  double weight_decay = 1e-7; // L2 term folded into the gradient
};

// SGD with momentum:  g' = g + wd*p;  v = mu*v + g';        p -= lr*v
// RMSprop:            g' = g + wd*p;  s = a*s + (1-a)*g'^2;  p -= lr*g'/sqrt(s + eps)
class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, ParameterList params) : cfg_(cfg), params_(std::move(params)) {
    accumulators_.reserve(params_.size());
    for (Parameter* p : params_) accumulators_.emplace_back(p->value.size(), 0.0);
  }

  const OptimizerConfig& config() const { return cfg_; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }
  double learning_rate() const { return cfg_.learning_rate; }
  const ParameterList& parameters() const { return params_; }

  void step() {
    for (Parameter* p : params_) {
      if (!p->grad_populated) throw MissingGradient("optimizer: parameter '" + p->name + "' has no gradient");
    }
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Parameter& p = *params_[k];
      std::vector<double>& acc = accumulators_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.value.grad[i] + cfg_.weight_decay * p.value[i];
        if (cfg_.kind == OptimizerKind::kSgdMomentum) {
          acc[i] = cfg_.momentum * acc[i] + g;
          p.value[i] -= cfg_.learning_rate * acc[i];
        } else {
          acc[i] = cfg_.alpha * acc[i] + (1.0 - cfg_.alpha) * g * g;
          p.value[i] -= cfg_.learning_rate * g / std::sqrt(acc[i] + cfg_.epsilon);
        }
      }
      p.zero_grad();
    }
  }

  void zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
  }

  // Rescales gradients so their global L2 norm is at most max_norm; returns the pre-clip norm.
  double clip_grad_norm(double max_norm) {
    double sq = 0.0;
    for (Parameter* p : params_)
      for (double g : p->value.grad) sq += g * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
      const double s = max_norm / norm;
      for (Parameter* p : params_)
        for (double& g : p->value.grad) g *= s;
    }
    return norm;
  }

 private:
  OptimizerConfig cfg_;
  ParameterList params_;
  std::vector<std::vector<double>> accumulators_;
};

}  // namespace memnav::ad
