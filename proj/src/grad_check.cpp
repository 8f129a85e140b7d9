#include "rrg/grad_check.h"

#include <algorithm>
#include <cmath>

namespace rrg {
namespace {

constexpr double kRelFloor = 1e-4;

GradCheckReport compare(const std::function<Tensor()>& f, Tensor& x, double rtol) {
  GradCheckReport rep;
  rep.analytic.assign(x.grad().begin(), x.grad().end());
  auto data = x.mutable_data();
  rep.numeric.resize(data.size());
  rep.rel_error.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double orig = data[i];
    const double h = 1e-5 * (1.0 + std::abs(orig));
    data[i] = orig + h;
    const double up = f().item();
    data[i] = orig - h;
    const double down = f().item();
    data[i] = orig;
    rep.numeric[i] = (up - down) / (2.0 * h);
    const double a = rep.analytic[i], n = rep.numeric[i];
    const double err = std::abs(a - n) / std::max({std::abs(a), std::abs(n), kRelFloor});
    rep.rel_error[i] = err;
    rep.max_rel_error = std::max(rep.max_rel_error, err);
  }
  rep.passed = rep.max_rel_error <= rtol;
  return rep;
}

}  // namespace

std::vector<GradCheckReport> finite_difference_check_all(const std::function<Tensor()>& f,
                                                         std::vector<Tensor> params, double rtol) {
  for (auto& p : params) {
    if (!p.requires_grad()) throw AutodiffError("finite_difference_check: parameter is not tracked");
    p.zero_grad();
  }
  {
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = f();
    }
    tape.backward(loss);
  }
  // Perturbed evaluations run with no tape, so nothing is recorded.
  std::vector<GradCheckReport> out;
  out.reserve(params.size());
  for (auto& p : params) out.push_back(compare(f, p, rtol));
  return out;
}

GradCheckReport finite_difference_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                                        double rtol) {
  return finite_difference_check_all([&] { return f(x); }, {x}, rtol).front();
}

}  // namespace rrg
