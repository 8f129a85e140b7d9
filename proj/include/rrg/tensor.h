#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rrg/kernels.h"

namespace rrg {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class AutodiffError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct TensorStorage {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until needed
  bool requires_grad = false;
  bool leaf = true;
};

/// Handle to a dense row-major array of doubles.
///
/// Copies share storage (like a framework tensor). Leaves created with
/// `requires_grad` own a gradient buffer that backward passes accumulate
/// into; intermediates produced while a Tape is active get theirs lazily.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->data.size(); }
  /// Leading extent for 2-D use (product of all but the last dimension).
  std::size_t rows() const;
  std::size_t cols() const { return impl_->shape.back(); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad() { return impl_->grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  bool requires_grad() const { return impl_->requires_grad; }

  double item() const;
  double at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }
  double operator[](std::size_t i) const { return impl_->data[i]; }

  /// Deep copy with fresh (zero) gradient state.
  Tensor clone() const;
  /// Same values, no gradient tracking.
  Tensor detach() const;
  void zero_grad();
  void set_requires_grad(bool on);

  bool same_storage(const Tensor& o) const { return impl_ == o.impl_; }
  const std::shared_ptr<TensorStorage>& storage() const { return impl_; }

  explicit Tensor(std::shared_ptr<TensorStorage> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorStorage> impl_;
};

/// Ordered record of differentiable operations executed while the tape is
/// the current one for this thread (see TapeScope).
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Reverse-mode sweep from a scalar `loss` produced on this tape.
  /// Gradients accumulate into every tracked leaf reached.
  void backward(const Tensor& loss);
  /// Forget all recorded nodes so the tape can be reused.
  void reset();

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Used by ops.
  void record(const Tensor& output, std::function<void()> backward_rule);

  static Tape* current();

 private:
  friend class TapeScope;
  struct Node {
    std::shared_ptr<TensorStorage> output;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

/// Makes `tape` the recording target for ops on this thread until scope exit.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// x (rows×n) + bias (n or 1×n) broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor gelu(const Tensor& x);
Tensor exp(const Tensor& x);

Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Fused grouped scaled-dot-product attention; see kernels::AttentionShape.
struct AttentionOptions {
  std::size_t groups = 1;
  std::size_t heads = 1;
  bool causal = false;
  std::size_t visible_prefix = 0;
  std::size_t q_offset = 0;
};
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionOptions& opt);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
/// Mean over each of `groups` consecutive row blocks → groups×n.
Tensor mean_rows(const Tensor& x, std::size_t groups = 1);
/// Each row repeated `times` consecutively: (r×n) → (r·times×n).
Tensor repeat_rows(const Tensor& x, std::size_t times);
/// Whole block stacked `times`: (r×n) → (times·r×n).
Tensor tile_rows(const Tensor& x, std::size_t times);
Tensor reshape(const Tensor& x, Shape shape);
/// Rows of `table` selected by `ids`.
Tensor embedding(const Tensor& table, std::span<const int> ids);
/// x[i, idx[i]] for each row → (rows×1).
Tensor gather_cols(const Tensor& x, std::span<const int> idx);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Mean over rows of −log softmax(logits)[target].
Tensor cross_entropy_from_logits(const Tensor& logits, std::span<const int> targets);
/// Mean over entries of binary cross-entropy with 0/1 targets.
Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets);
/// Mean over rows of KL(softmax(logits) ∥ exp(ref_log_probs)); ref is constant.
Tensor kl_divergence(const Tensor& logits, const Tensor& ref_log_probs);
/// PPO clipped surrogate, −mean_i min(ρ_i·A_i, clip(ρ_i, 1−ε, 1+ε)·A_i) with
/// ρ_i = exp(new_i − old_i). Only `new_log_probs` is differentiated.
Tensor clipped_surrogate(const Tensor& new_log_probs, std::span<const double> old_log_probs,
                         std::span<const double> advantages, double clip_eps);

}  // namespace ops
}  // namespace rrg
