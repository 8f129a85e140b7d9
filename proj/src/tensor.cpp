#include "rrg/tensor.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace rrg {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

thread_local Tape* g_current_tape = nullptr;

std::shared_ptr<TensorStorage> make_storage(Shape shape, bool requires_grad, bool leaf) {
  for (auto d : shape)
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  if (shape.empty()) throw ShapeError("tensor needs at least one dimension");
  auto s = std::make_shared<TensorStorage>();
  s->data.assign(shape_numel(shape), 0.0);
  s->shape = std::move(shape);
  s->requires_grad = requires_grad;
  s->leaf = leaf;
  if (requires_grad && leaf) s->grad.assign(s->data.size(), 0.0);
  return s;
}

std::span<double> grad_of(const std::shared_ptr<TensorStorage>& s) {
  if (s->grad.empty()) s->grad.assign(s->data.size(), 0.0);
  return s->grad;
}

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (!g_current_tape) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

bool tracking_all(const std::vector<Tensor>& inputs) {
  if (!g_current_tape) return false;
  for (const Tensor& t : inputs)
    if (t.requires_grad()) return true;
  return false;
}

Tensor make_output(Shape shape, bool track) { return Tensor(make_storage(std::move(shape), track, false)); }

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data())
    if (!std::isfinite(v)) throw std::domain_error(std::string(op) + ": non-finite value");
}

void record(const Tensor& out, std::function<void()> rule) {
  if (out.requires_grad()) g_current_tape->record(out, std::move(rule));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return Tensor(make_storage(std::move(shape), requires_grad, true));
}

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size())
    throw ShapeError("Tensor::from: shape " + shape_str(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  Tensor t = zeros(std::move(shape), requires_grad);
  t.impl_->data = std::move(values);
  return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({1}, {v}, requires_grad); }

std::size_t Tensor::rows() const { return size() / cols(); }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor Tensor::clone() const {
  auto s = make_storage(impl_->shape, impl_->requires_grad, true);
  s->data = impl_->data;
  return Tensor(std::move(s));
}

Tensor Tensor::detach() const {
  auto s = make_storage(impl_->shape, false, true);
  s->data = impl_->data;
  return Tensor(std::move(s));
}

void Tensor::zero_grad() {
  if (impl_->requires_grad) impl_->grad.assign(impl_->data.size(), 0.0);
}

void Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  if (on && impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  if (!on) impl_->grad.clear();
}

// ---------------------------------------------------------------- Tape

Tape* Tape::current() { return g_current_tape; }

void Tape::record(const Tensor& output, std::function<void()> backward_rule) {
  if (consumed_) throw AutodiffError("recording onto a tape that was already run backward; reset it first");
  nodes_.push_back(Node{output.storage(), std::move(backward_rule)});
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw AutodiffError("stale tape: backward already ran; call reset() before reuse");
  if (!loss.defined() || loss.size() != 1)
    throw AutodiffError("backward needs a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  auto it = std::find_if(nodes_.rbegin(), nodes_.rend(),
                         [&](const Node& n) { return n.output == loss.storage(); });
  if (it == nodes_.rend()) throw AutodiffError("loss was not produced on this tape");
  grad_of(loss.storage())[0] += 1.0;
  for (auto n = nodes_.rbegin(); n != nodes_.rend(); ++n)
    if (!n->output->grad.empty()) n->backward();
  consumed_ = true;
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

TapeScope::TapeScope(Tape& tape) : previous_(g_current_tape) { g_current_tape = &tape; }
TapeScope::~TapeScope() { g_current_tape = previous_; }

// ---------------------------------------------------------------- ops

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (b.ndim() != 2 || a.cols() != b.dim(0))
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.dim(1);
  Tensor out = make_output({m, n}, tracking({&a, &b}));
  kernels::matmul(a.data(), b.data(), out.mutable_data(), m, k, n, false);
  check_finite(out, "matmul");
  auto sa = a.storage(), sb = b.storage(), so = out.storage();
  record(out, [sa, sb, so, m, k, n] {
    if (sa->requires_grad) kernels::matmul_bt_acc(so->grad, sb->data, grad_of(sa), m, n, k);
    if (sb->requires_grad) kernels::matmul_at_acc(sa->data, so->grad, grad_of(sb), m, k, n);
  });
  return out;
}

namespace {
template <class Fwd, class Bwd>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
  require_same_shape(a, b, name);
  Tensor out = make_output(a.shape(), tracking({&a, &b}));
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = fwd(a[i], b[i]);
  check_finite(out, name);
  auto sa = a.storage(), sb = b.storage(), so = out.storage();
  record(out, [sa, sb, so, bwd] {
    std::span<double> ga, gb;
    if (sa->requires_grad) ga = grad_of(sa);
    if (sb->requires_grad) gb = grad_of(sb);
    for (std::size_t i = 0; i < so->grad.size(); ++i) {
      auto [da, db] = bwd(sa->data[i], sb->data[i], so->grad[i]);
      if (!ga.empty()) ga[i] += da;
      if (!gb.empty()) gb[i] += db;
    }
  });
  return out;
}

template <class Fwd, class Deriv>
Tensor unary_elementwise(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  Tensor out = make_output(x.shape(), tracking({&x}));
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = fwd(x[i]);
  check_finite(out, name);
  auto sx = x.storage(), so = out.storage();
  record(out, [sx, so, deriv] {
    auto gx = grad_of(sx);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += so->grad[i] * deriv(sx->data[i], so->data[i]);
  });
  return out;
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double g) { return std::pair{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double g) { return std::pair{g, -g}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double g) { return std::pair{g * y, g * x}; });
}

Tensor scale(const Tensor& a, double s) {
  return unary_elementwise(
      a, "scale", [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor exp(const Tensor& x) {
  return unary_elementwise(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor gelu(const Tensor& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double a = 0.044715;
  return unary_elementwise(
      x, "gelu",
      [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + a * v * v * v))); },
      [](double v, double) {
        const double t = std::tanh(c * (v + a * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * a * v * v);
      });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t n = x.cols();
  if (bias.size() != n)
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match " +
                     shape_str(x.shape()));
  Tensor out = make_output(x.shape(), tracking({&x, &bias}));
  auto o = out.mutable_data();
  const std::size_t rows = x.rows();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) o[r * n + j] = x[r * n + j] + bias[j];
  check_finite(out, "add_bias");
  auto sx = x.storage(), sb = bias.storage(), so = out.storage();
  record(out, [sx, sb, so, rows, n] {
    if (sx->requires_grad) {
      auto gx = grad_of(sx);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += so->grad[i];
    }
    if (sb->requires_grad) {
      auto gb = grad_of(sb);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) gb[j] += so->grad[r * n + j];
    }
  });
  return out;
}

Tensor softmax(const Tensor& x) {
  check_finite(x, "softmax input");
  const std::size_t n = x.cols(), rows = x.rows();
  Tensor out = make_output(x.shape(), tracking({&x}));
  auto o = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * n;
    double* yr = o.data() + r * n;
    const double mx = *std::max_element(xr, xr + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += (yr[j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < n; ++j) yr[j] /= total;
  }
  auto sx = x.storage(), so = out.storage();
  record(out, [sx, so, rows, n] {
    auto gx = grad_of(sx);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = so->data.data() + r * n;
      const double* gy = so->grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[j] * (gy[j] - dot);
    }
  });
  return out;
}

Tensor log_softmax(const Tensor& x) {
  check_finite(x, "log_softmax input");
  const std::size_t n = x.cols(), rows = x.rows();
  Tensor out = make_output(x.shape(), tracking({&x}));
  auto o = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * n;
    const double mx = *std::max_element(xr, xr + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(xr[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < n; ++j) o[r * n + j] = xr[j] - lse;
  }
  auto sx = x.storage(), so = out.storage();
  record(out, [sx, so, rows, n] {
    auto gx = grad_of(sx);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = so->data.data() + r * n;
      const double* gy = so->grad.data() + r * n;
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) total += gy[j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += gy[j] - std::exp(y[j]) * total;
    }
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = x.cols(), rows = x.rows();
  if (gain.size() != d || bias.size() != d)
    throw ShapeError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                     shape_str(bias.shape()) + " do not match " + shape_str(x.shape()));
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
  Tensor out = make_output(x.shape(), tracking({&x, &gain, &bias}));
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  auto o = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      o[r * d + j] = h * gain[j] + bias[j];
    }
  }
  check_finite(out, "layer_norm");
  auto sx = x.storage(), sg = gain.storage(), sb = bias.storage(), so = out.storage();
  record(out, [sx, sg, sb, so, xhat, rstd, rows, d] {
    std::span<double> gx, gg, gb;
    if (sx->requires_grad) gx = grad_of(sx);
    if (sg->requires_grad) gg = grad_of(sg);
    if (sb->requires_grad) gb = grad_of(sb);
    const double inv_d = 1.0 / static_cast<double>(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gy = so->grad.data() + r * d;
      const double* h = xhat->data() + r * d;
      double mean_dh = 0.0, mean_dh_h = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double dh = gy[j] * sg->data[j];
        mean_dh += dh;
        mean_dh_h += dh * h[j];
        if (!gg.empty()) gg[j] += gy[j] * h[j];
        if (!gb.empty()) gb[j] += gy[j];
      }
      if (gx.empty()) continue;
      mean_dh *= inv_d;
      mean_dh_h *= inv_d;
      for (std::size_t j = 0; j < d; ++j) {
        const double dh = gy[j] * sg->data[j];
        gx[r * d + j] += (*rstd)[r] * (dh - mean_dh - h[j] * mean_dh_h);
      }
    }
  });
  return out;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionOptions& opt) {
  if (q.cols() != k.cols() || k.shape() != v.shape())
    throw ShapeError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                     shape_str(v.shape()) + " are incompatible");
  if (opt.groups == 0 || q.rows() % opt.groups || k.rows() % opt.groups)
    throw ShapeError("attention: row counts not divisible into " + std::to_string(opt.groups) + " groups");
  if (opt.heads == 0 || q.cols() % opt.heads)
    throw ShapeError("attention: width " + std::to_string(q.cols()) + " not divisible by " +
                     std::to_string(opt.heads) + " heads");
  kernels::AttentionShape s;
  s.groups = opt.groups;
  s.q_rows = q.rows() / opt.groups;
  s.kv_rows = k.rows() / opt.groups;
  s.dim = q.cols();
  s.heads = opt.heads;
  s.causal = opt.causal;
  s.visible_prefix = opt.visible_prefix;
  s.q_offset = opt.q_offset;
  if (s.causal && s.visible_prefix == 0 && s.q_offset == 0 && s.kv_rows == 0)
    throw ShapeError("attention: no visible keys");
  Tensor out = make_output({q.rows(), q.cols()}, tracking({&q, &k, &v}));
  auto probs = std::make_shared<std::vector<double>>(s.groups * s.heads * s.q_rows * s.kv_rows);
  kernels::attention_forward(s, q.data(), k.data(), v.data(), out.mutable_data(), *probs);
  check_finite(out, "attention");
  auto sq = q.storage(), sk = k.storage(), sv = v.storage(), so = out.storage();
  record(out, [sq, sk, sv, so, probs, s] {
    std::span<double> dq, dk, dv;
    if (sq->requires_grad) dq = grad_of(sq);
    if (sk->requires_grad) dk = grad_of(sk);
    if (sv->requires_grad) dv = grad_of(sv);
    kernels::attention_backward(s, sq->data, sk->data, sv->data, *probs, so->grad, dq, dk, dv);
  });
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
  const std::size_t n = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != n)
      throw ShapeError("concat_rows: width mismatch " + shape_str(parts.front().shape()) + " vs " +
                       shape_str(p.shape()));
    rows += p.rows();
  }
  Tensor out = make_output({rows, n}, tracking_all(parts));
  auto o = out.mutable_data();
  std::size_t offset = 0;
  std::vector<std::shared_ptr<TensorStorage>> srcs;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), o.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.size();
    srcs.push_back(p.storage());
  }
  auto so = out.storage();
  record(out, [srcs, so] {
    std::size_t off = 0;
    for (const auto& s : srcs) {
      if (s->requires_grad) {
        auto g = grad_of(s);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += so->grad[off + i];
      }
      off += s->data.size();
    }
  });
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  const std::size_t n = x.cols();
  if (count == 0 || begin + count > x.rows())
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + shape_str(x.shape()));
  Tensor out = make_output({count, n}, tracking({&x}));
  std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(begin * n), count * n, out.mutable_data().begin());
  auto sx = x.storage(), so = out.storage();
  record(out, [sx, so, begin, n] {
    auto g = grad_of(sx);
    for (std::size_t i = 0; i < so->grad.size(); ++i) g[begin * n + i] += so->grad[i];
  });
  return out;
}

Tensor mean_rows(const Tensor& x, std::size_t groups) {
  const std::size_t n = x.cols(), rows = x.rows();
  if (groups == 0 || rows % groups)
    throw ShapeError("mean_rows: " + shape_str(x.shape()) + " not divisible into " +
                     std::to_string(groups) + " groups");
  const std::size_t per = rows / groups;
  Tensor out = make_output({groups, n}, tracking({&x}));
  auto o = out.mutable_data();
  const double inv = 1.0 / static_cast<double>(per);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t r = 0; r < per; ++r)
      for (std::size_t j = 0; j < n; ++j) o[g * n + j] += x[(g * per + r) * n + j];
    for (std::size_t j = 0; j < n; ++j) o[g * n + j] *= inv;
  }
  auto sx = x.storage(), so = out.storage();
  record(out, [sx, so, groups, per, n, inv] {
    auto gx = grad_of(sx);
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t r = 0; r < per; ++r)
        for (std::size_t j = 0; j < n; ++j) gx[(g * per + r) * n + j] += so->grad[g * n + j] * inv;
  });
  return out;
}

Tensor repeat_rows(const Tensor& x, std::size_t times) {
  const std::size_t n = x.cols(), rows = x.rows();
  if (times == 0) throw ShapeError("repeat_rows: times must be positive");
  Tensor out = make_output({rows * times, n}, tracking({&x}));
  auto o = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < times; ++t)
      std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(r * n), n,
                  o.begin() + static_cast<std::ptrdiff_t>((r * times + t) * n));
  auto sx = x.storage(), so = out.storage();
  record(out, [sx, so, rows, times, n] {
    auto g = grad_of(sx);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t t = 0; t < times; ++t)
        for (std::size_t j = 0; j < n; ++j) g[r * n + j] += so->grad[(r * times + t) * n + j];
  });
  return out;
}

Tensor tile_rows(const Tensor& x, std::size_t times) {
  const std::size_t n = x.cols(), rows = x.rows();
  if (times == 0) throw ShapeError("tile_rows: times must be positive");
  Tensor out = make_output({rows * times, n}, tracking({&x}));
  auto o = out.mutable_data();
  for (std::size_t t = 0; t < times; ++t)
    std::copy(x.data().begin(), x.data().end(), o.begin() + static_cast<std::ptrdiff_t>(t * x.size()));
  auto sx = x.storage(), so = out.storage();
  record(out, [sx, so, times] {
    auto g = grad_of(sx);
    const std::size_t block = g.size();
    for (std::size_t t = 0; t < times; ++t)
      for (std::size_t i = 0; i < block; ++i) g[i] += so->grad[t * block + i];
  });
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor out = make_output(std::move(shape), tracking({&x}));
  std::copy(x.data().begin(), x.data().end(), out.mutable_data().begin());
  auto sx = x.storage(), so = out.storage();
  record(out, [sx, so] {
    auto g = grad_of(sx);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += so->grad[i];
  });
  return out;
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  const std::size_t n = table.cols(), vocab = table.rows();
  if (ids.empty()) throw ShapeError("embedding: empty id sequence");
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      throw std::out_of_range("embedding: id " + std::to_string(id) + " outside table of " +
                              std::to_string(vocab) + " rows");
  Tensor out = make_output({ids.size(), n}, tracking({&table}));
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[i] * n), n,
                o.begin() + static_cast<std::ptrdiff_t>(i * n));
  auto st = table.storage(), so = out.storage();
  std::vector<int> idv(ids.begin(), ids.end());
  record(out, [st, so, idv, n] {
    auto g = grad_of(st);
    for (std::size_t i = 0; i < idv.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) g[static_cast<std::size_t>(idv[i]) * n + j] += so->grad[i * n + j];
  });
  return out;
}

Tensor gather_cols(const Tensor& x, std::span<const int> idx) {
  const std::size_t n = x.cols(), rows = x.rows();
  if (idx.size() != rows)
    throw ShapeError("gather_cols: " + std::to_string(idx.size()) + " indices for " + shape_str(x.shape()));
  for (int i : idx)
    if (i < 0 || static_cast<std::size_t>(i) >= n)
      throw std::out_of_range("gather_cols: index " + std::to_string(i) + " out of range");
  Tensor out = make_output({rows, 1}, tracking({&x}));
  auto o = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r) o[r] = x[r * n + static_cast<std::size_t>(idx[r])];
  auto sx = x.storage(), so = out.storage();
  std::vector<int> iv(idx.begin(), idx.end());
  record(out, [sx, so, iv, n] {
    auto g = grad_of(sx);
    for (std::size_t r = 0; r < iv.size(); ++r) g[r * n + static_cast<std::size_t>(iv[r])] += so->grad[r];
  });
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = make_output({1}, tracking({&x}));
  double s = 0.0;
  for (double v : x.data()) s += v;
  out.mutable_data()[0] = s;
  check_finite(out, "sum");
  auto sx = x.storage(), so = out.storage();
  record(out, [sx, so] {
    auto g = grad_of(sx);
    for (double& v : g) v += so->grad[0];
  });
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor cross_entropy_from_logits(const Tensor& logits, std::span<const int> targets) {
  const std::size_t v = logits.cols(), b = logits.rows();
  if (targets.size() != b)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_str(logits.shape()));
  for (int t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= v)
      throw std::out_of_range("cross_entropy: target " + std::to_string(t) + " not in [0, " +
                              std::to_string(v) + ")");
  check_finite(logits, "cross_entropy input");
  Tensor out = make_output({1}, tracking({&logits}));
  auto probs = std::make_shared<std::vector<double>>(logits.size());
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    const double* z = logits.data().data() + r * v;
    const double mx = *std::max_element(z, z + v);
    double se = 0.0;
    for (std::size_t j = 0; j < v; ++j) se += ((*probs)[r * v + j] = std::exp(z[j] - mx));
    for (std::size_t j = 0; j < v; ++j) (*probs)[r * v + j] /= se;
    total += mx + std::log(se) - z[static_cast<std::size_t>(targets[r])];
  }
  out.mutable_data()[0] = total / static_cast<double>(b);
  auto sl = logits.storage(), so = out.storage();
  std::vector<int> tv(targets.begin(), targets.end());
  record(out, [sl, so, probs, tv, b, v] {
    auto g = grad_of(sl);
    const double scale = so->grad[0] / static_cast<double>(b);
    for (std::size_t r = 0; r < b; ++r) {
      for (std::size_t j = 0; j < v; ++j) g[r * v + j] += scale * (*probs)[r * v + j];
      g[r * v + static_cast<std::size_t>(tv[r])] -= scale;
    }
  });
  return out;
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets) {
  if (targets.size() != logits.size())
    throw ShapeError("bce_with_logits: " + std::to_string(targets.size()) + " targets for " +
                     shape_str(logits.shape()));
  Tensor out = make_output({1}, tracking({&logits}));
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    total += std::max(z, 0.0) - z * targets[i] + std::log1p(std::exp(-std::abs(z)));
  }
  const double n = static_cast<double>(logits.size());
  out.mutable_data()[0] = total / n;
  check_finite(out, "bce_with_logits");
  auto sl = logits.storage(), so = out.storage();
  std::vector<double> tv(targets.begin(), targets.end());
  record(out, [sl, so, tv, n] {
    auto g = grad_of(sl);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double sig = 1.0 / (1.0 + std::exp(-sl->data[i]));
      g[i] += so->grad[0] * (sig - tv[i]) / n;
    }
  });
  return out;
}

Tensor kl_divergence(const Tensor& logits, const Tensor& ref_log_probs) {
  require_same_shape(logits, ref_log_probs, "kl_divergence");
  check_finite(logits, "kl_divergence input");
  const std::size_t v = logits.cols(), rows = logits.rows();
  Tensor out = make_output({1}, tracking({&logits}));
  auto logp = std::make_shared<std::vector<double>>(logits.size());
  auto row_kl = std::make_shared<std::vector<double>>(rows);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.data().data() + r * v;
    const double mx = *std::max_element(z, z + v);
    double se = 0.0;
    for (std::size_t j = 0; j < v; ++j) se += std::exp(z[j] - mx);
    const double lse = mx + std::log(se);
    double kl = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      const double lp = z[j] - lse;
      (*logp)[r * v + j] = lp;
      kl += std::exp(lp) * (lp - ref_log_probs[r * v + j]);
    }
    (*row_kl)[r] = kl;
    total += kl;
  }
  out.mutable_data()[0] = total / static_cast<double>(rows);
  check_finite(out, "kl_divergence");
  auto sl = logits.storage(), sr = ref_log_probs.storage(), so = out.storage();
  record(out, [sl, sr, so, logp, row_kl, rows, v] {
    auto g = grad_of(sl);
    const double scale = so->grad[0] / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < v; ++j) {
        const double lp = (*logp)[r * v + j];
        g[r * v + j] += scale * std::exp(lp) * (lp - sr->data[r * v + j] - (*row_kl)[r]);
      }
  });
  return out;
}

Tensor clipped_surrogate(const Tensor& new_log_probs, std::span<const double> old_log_probs,
                         std::span<const double> advantages, double clip_eps) {
  const std::size_t n = new_log_probs.size();
  if (old_log_probs.size() != n || advantages.size() != n)
    throw ShapeError("clipped_surrogate: length mismatch (" + std::to_string(n) + ", " +
                     std::to_string(old_log_probs.size()) + ", " + std::to_string(advantages.size()) + ")");
  Tensor out = make_output({1}, tracking({&new_log_probs}));
  auto dobj = std::make_shared<std::vector<double>>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ratio = std::exp(new_log_probs[i] - old_log_probs[i]);
    const double unclipped = ratio * advantages[i];
    const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantages[i];
    total += std::min(unclipped, clipped);
    (*dobj)[i] = unclipped <= clipped ? unclipped : 0.0;
  }
  out.mutable_data()[0] = -total / static_cast<double>(n);
  check_finite(out, "clipped_surrogate");
  auto sn = new_log_probs.storage(), so = out.storage();
  record(out, [sn, so, dobj, n] {
    auto g = grad_of(sn);
    for (std::size_t i = 0; i < n; ++i) g[i] -= so->grad[0] * (*dobj)[i] / static_cast<double>(n);
  });
  return out;
}

}  // namespace ops
}  // namespace rrg
