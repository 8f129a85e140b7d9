#pragma once

#include <cstddef>
#include <span>

// Dense row-major kernels used by the tensor ops.
//
// Every kernel exists twice: a plain serial reference in `serial` and an
// OpenMP version in `parallel` that splits work across output rows (or
// attention groups). Each output element is produced by exactly one thread
// with the same summation order as the serial code, so both paths are
// bitwise identical. The tensor ops call the dispatching functions at the
// bottom of this header.

namespace rrg::kernels {

/// Layout of a grouped, optionally masked scaled-dot-product attention.
///
/// Queries are `groups * q_rows` rows, keys/values are `groups * kv_rows`
/// rows, and group g of the queries only sees group g of the keys. Within a
/// group, query row i sits at absolute position `q_offset + i`; key row j is
/// visible to it iff `j < visible_prefix || j <= q_offset + i` when `causal`
/// is set, and always otherwise.
struct AttentionShape {
  std::size_t groups = 1;
  std::size_t q_rows = 0;
  std::size_t kv_rows = 0;
  std::size_t dim = 0;    // model width (all heads)
  std::size_t heads = 1;  // dim % heads == 0
  bool causal = false;
  std::size_t visible_prefix = 0;
  std::size_t q_offset = 0;

  bool visible(std::size_t i, std::size_t j) const {
    return !causal || j < visible_prefix || j <= q_offset + i;
  }
};

namespace serial {

// C (m×n) = A (m×k) · B (k×n); accumulates into C when `accumulate`.
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate);
// C (m×n) += A (m×k) · Bᵀ where B is n×k.
void matmul_bt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);
// C (k×n) += Aᵀ · B where A is m×k and B is m×n.
void matmul_at_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);

// out = softmax(q kᵀ / sqrt(dh)) v per head and group; `probs` receives the
// attention weights (groups*heads*q_rows*kv_rows) for the backward pass.
void attention_forward(const AttentionShape& s, std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<double> out, std::span<double> probs);
// Accumulates into dq/dk/dv (any of which may be empty to skip it).
void attention_backward(const AttentionShape& s, std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, std::span<const double> probs,
                        std::span<const double> dout, std::span<double> dq, std::span<double> dk,
                        std::span<double> dv);

}  // namespace serial

namespace parallel {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate);
void matmul_bt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);
void matmul_at_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);
void attention_forward(const AttentionShape& s, std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<double> out, std::span<double> probs);
void attention_backward(const AttentionShape& s, std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, std::span<const double> probs,
                        std::span<const double> dout, std::span<double> dq, std::span<double> dk,
                        std::span<double> dv);

}  // namespace parallel

/// True when the library was built with OpenMP.
bool openmp_enabled();

// Dispatch: parallel path when OpenMP is on and the problem is big enough
// to amortize a parallel region, serial otherwise.
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate);
void matmul_bt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);
void matmul_at_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);
void attention_forward(const AttentionShape& s, std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<double> out, std::span<double> probs);
void attention_backward(const AttentionShape& s, std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, std::span<const double> probs,
                        std::span<const double> dout, std::span<double> dq, std::span<double> dk,
                        std::span<double> dv);

}  // namespace rrg::kernels
