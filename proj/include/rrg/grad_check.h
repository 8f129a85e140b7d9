#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rrg/tensor.h"

namespace rrg {

struct GradCheckReport {
  bool passed = true;
  double max_rel_error = 0.0;
  std::vector<double> analytic;
  std::vector<double> numeric;
  std::vector<double> rel_error;  // per element
};

/// Compares the tape gradient of scalar `f(x)` with central differences,
/// step h = 1e-5·(1+|x_i|). Relative error is |a−n| / max(|a|, |n|, 1e-4);
/// the floor keeps near-zero gradients from reporting round-off as failure.
/// `x` must be a leaf with requires_grad; its values are restored afterwards.
GradCheckReport finite_difference_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                                        double rtol = 1e-4);

/// Same check for a closure over several tracked leaves at once; returns
/// one report per parameter, in order.
std::vector<GradCheckReport> finite_difference_check_all(const std::function<Tensor()>& f,
                                                         std::vector<Tensor> params, double rtol = 1e-4);

}  // namespace rrg
