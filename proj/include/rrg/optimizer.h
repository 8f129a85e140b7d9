#pragma once

#include "rrg/config.h"
#include "rrg/layers.h"

namespace rrg {

/// Adam (β1 0.9, β2 0.999, eps 1e-8) or plain SGD over a fixed parameter
/// list, with optional global-norm gradient clipping.
class Optimizer {
 public:
  Optimizer(NamedTensors params, OptimizerKind kind, double lr, double grad_clip);

  /// Applies the accumulated gradients, then clears them. Returns the
  /// gradient norm before clipping.
  double step();
  void zero_grad();
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  NamedTensors params_;
  OptimizerKind kind_;
  double lr_;
  double clip_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace rrg
