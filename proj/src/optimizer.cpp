#include "rrg/optimizer.h"

#include <cmath>

namespace rrg {

Optimizer::Optimizer(NamedTensors params, OptimizerKind kind, double lr, double grad_clip)
    : params_(std::move(params)), kind_(kind), lr_(lr), clip_(grad_clip) {
  for (const auto& [name, t] : params_) {
    m_.emplace_back(t.size(), 0.0);
    v_.emplace_back(t.size(), 0.0);
  }
}

void Optimizer::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

double Optimizer::step() {
  double sq = 0.0;
  for (const auto& [name, t] : params_)
    for (double g : t.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  const double scale = clip_ > 0.0 && norm > clip_ ? clip_ / norm : 1.0;
  ++t_;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    Tensor& t = params_[p].second;
    if (!t.has_grad()) continue;
    auto w = t.mutable_data();
    const auto g = t.grad();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * scale;
      if (kind_ == OptimizerKind::kSgd) {
        w[i] -= lr_ * gi;
        continue;
      }
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
  zero_grad();
  return norm;
}

}  // namespace rrg
