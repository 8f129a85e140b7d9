#include "rrg/kernels.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rrg::kernels {
namespace {

// Work below this many multiply-adds stays on the calling thread.
constexpr std::size_t kParallelThreshold = 1u << 15;

inline double dot(const double* x, const double* y, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += x[i] * y[i];
    s1 += x[i + 1] * y[i + 1];
    s2 += x[i + 2] * y[i + 2];
    s3 += x[i + 3] * y[i + 3];
  }
  for (; i < n; ++i) s0 += x[i] * y[i];
  return (s0 + s1) + (s2 + s3);
}

// Register tiles. Each output element still sums its products in ascending
// order of the shared index, so tiling never changes a result bit. The
// four-wide vector type is a GCC/Clang extension; lanes are independent, so
// it computes exactly what the scalar loops would.
using v4d = double __attribute__((vector_size(32)));
#ifdef __AVX512F__
constexpr std::size_t kLanes = 8;
#else
constexpr std::size_t kLanes = 4;
#endif
using vwide = double __attribute__((vector_size(kLanes * sizeof(double))));

template <typename V>
inline V load(const double* p) {
  V v;
  std::memcpy(&v, p, sizeof v);
  return v;
}
template <typename V>
inline void store(double* p, V v) { std::memcpy(p, &v, sizeof v); }

constexpr std::size_t kTileRows = 4;
constexpr std::size_t kTileCols = 16;

// C[r][w] (+)= sum_p A(r, p) * B[p][w] over an R×W tile, where
// A(r, p) = a[r * a_rs + p * a_ps] so the same code serves A and Aᵀ.
template <std::size_t R, std::size_t W>
inline void gemm_tile(const double* a, std::size_t a_rs, std::size_t a_ps, const double* b,
                      std::size_t ldb, double* c, std::size_t ldc, std::size_t depth, bool accumulate) {
  constexpr std::size_t V = W / kLanes;
  vwide acc[R][V];
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t v = 0; v < V; ++v)
      acc[r][v] = accumulate ? load<vwide>(c + r * ldc + kLanes * v) : vwide{};
  for (std::size_t p = 0; p < depth; ++p) {
    const double* bp = b + p * ldb;
    vwide bv[V];
    for (std::size_t v = 0; v < V; ++v) bv[v] = load<vwide>(bp + kLanes * v);
    for (std::size_t r = 0; r < R; ++r) {
      const vwide ar = vwide{} + a[r * a_rs + p * a_ps];
      for (std::size_t v = 0; v < V; ++v) acc[r][v] += ar * bv[v];
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t v = 0; v < V; ++v) store<vwide>(c + r * ldc + kLanes * v, acc[r][v]);
}

// Ragged edge of the same computation.
inline void gemm_edge(const double* a, std::size_t a_rs, std::size_t a_ps, const double* b, std::size_t ldb,
                      double* c, std::size_t ldc, std::size_t depth, bool accumulate, std::size_t rows,
                      std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* crow = c + r * ldc;
    if (!accumulate) std::fill(crow, crow + cols, 0.0);
    for (std::size_t p = 0; p < depth; ++p) {
      const double ar = a[r * a_rs + p * a_ps];
      const double* bp = b + p * ldb;
      for (std::size_t w = 0; w < cols; ++w) crow[w] += ar * bp[w];
    }
  }
}

// Output rows [r0, r0 + rows) of C (· × n), rows ≤ kTileRows.
inline void gemm_rows(const double* a, std::size_t a_rs, std::size_t a_ps, const double* b, double* c,
                      std::size_t r0, std::size_t rows, std::size_t depth, std::size_t n, bool accumulate) {
  const double* ab = a + r0 * a_rs;
  double* cb = c + r0 * n;
  std::size_t j = 0;
  if (rows == kTileRows)
    for (; j + kTileCols <= n; j += kTileCols)
      gemm_tile<kTileRows, kTileCols>(ab, a_rs, a_ps, b + j, n, cb + j, n, depth, accumulate);
  if (j < n) gemm_edge(ab, a_rs, a_ps, b + j, n, cb + j, n, depth, accumulate, rows, n - j);
}

std::size_t row_blocks(std::size_t rows) { return (rows + kTileRows - 1) / kTileRows; }

// Block `blk` of C = A·B (A is m×k).
void matmul_block(const double* a, const double* b, double* c, std::size_t blk, std::size_t m, std::size_t k,
                  std::size_t n, bool accumulate) {
  const std::size_t r0 = blk * kTileRows;
  gemm_rows(a, k, 1, b, c, r0, std::min(kTileRows, m - r0), k, n, accumulate);
}

// Block `blk` of C (k×n) += Aᵀ·B, summing over A's m rows in ascending order.
void matmul_at_block(const double* a, const double* b, double* c, std::size_t blk, std::size_t m,
                     std::size_t k, std::size_t n) {
  const std::size_t r0 = blk * kTileRows;
  gemm_rows(a, 1, k, b, c, r0, std::min(kTileRows, k - r0), m, n, true);
}

// A·Bᵀ runs as A·(Bᵀ) through the same tiles once B is transposed.
std::vector<double> transposed(const double* b, std::size_t rows, std::size_t cols) {
  constexpr std::size_t kBlock = 16;
  std::vector<double> t(rows * cols);
  for (std::size_t i0 = 0; i0 < rows; i0 += kBlock)
    for (std::size_t j0 = 0; j0 < cols; j0 += kBlock)
      for (std::size_t i = i0; i < std::min(rows, i0 + kBlock); ++i)
        for (std::size_t j = j0; j < std::min(cols, j0 + kBlock); ++j) t[j * rows + i] = b[i * cols + j];
  return t;
}

// Forward for one (group, query row), all heads.
void attention_row(const AttentionShape& s, const double* q, const double* k, const double* v,
                   double* out, double* probs, std::size_t g, std::size_t i,
                   std::vector<double>& scratch) {
  const std::size_t dh = s.dim / s.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  scratch.resize(s.kv_rows);
  const double* qrow = q + (g * s.q_rows + i) * s.dim;
  double* orow = out + (g * s.q_rows + i) * s.dim;
  for (std::size_t h = 0; h < s.heads; ++h) {
    double* prow = probs + ((g * s.heads + h) * s.q_rows + i) * s.kv_rows;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < s.kv_rows; ++j) {
      if (!s.visible(i, j)) {
        scratch[j] = -INFINITY;
        continue;
      }
      const double* krow = k + (g * s.kv_rows + j) * s.dim + h * dh;
      scratch[j] = dot(qrow + h * dh, krow, dh) * scale;
      mx = std::max(mx, scratch[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < s.kv_rows; ++j) {
      const double e = scratch[j] == -INFINITY ? 0.0 : std::exp(scratch[j] - mx);
      prow[j] = e;
      total += e;
    }
    const double inv = 1.0 / total;
    double* oh = orow + h * dh;
    std::fill(oh, oh + dh, 0.0);
    for (std::size_t j = 0; j < s.kv_rows; ++j) {
      prow[j] *= inv;
      const double p = prow[j];
      if (p == 0.0) continue;
      const double* vrow = v + (g * s.kv_rows + j) * s.dim + h * dh;
      for (std::size_t d = 0; d < dh; ++d) oh[d] += p * vrow[d];
    }
  }
}

// Backward for one (group, head): key/value gradients of a group only
// receive contributions from that group's queries.
void attention_group_backward(const AttentionShape& s, const double* q, const double* k,
                              const double* v, const double* probs, const double* dout, double* dq,
                              double* dk, double* dv, std::size_t g, std::size_t h,
                              std::vector<double>& dp) {
  const std::size_t dh = s.dim / s.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  dp.resize(s.kv_rows);
  for (std::size_t i = 0; i < s.q_rows; ++i) {
    const double* prow = probs + ((g * s.heads + h) * s.q_rows + i) * s.kv_rows;
    const double* dorow = dout + (g * s.q_rows + i) * s.dim + h * dh;
    const double* qrow = q + (g * s.q_rows + i) * s.dim + h * dh;
    double weighted = 0.0;
    for (std::size_t j = 0; j < s.kv_rows; ++j) {
      if (prow[j] == 0.0) {
        dp[j] = 0.0;
        continue;
      }
      const double* vrow = v + (g * s.kv_rows + j) * s.dim + h * dh;
      dp[j] = dot(dorow, vrow, dh);
      weighted += prow[j] * dp[j];
    }
    for (std::size_t j = 0; j < s.kv_rows; ++j) {
      const double p = prow[j];
      if (p == 0.0) continue;
      const double ds = p * (dp[j] - weighted) * scale;
      const std::size_t kv_off = (g * s.kv_rows + j) * s.dim + h * dh;
      if (dq) {
        double* dqrow = dq + (g * s.q_rows + i) * s.dim + h * dh;
        const double* krow = k + kv_off;
        for (std::size_t d = 0; d < dh; ++d) dqrow[d] += ds * krow[d];
      }
      if (dk) {
        double* dkrow = dk + kv_off;
        for (std::size_t d = 0; d < dh; ++d) dkrow[d] += ds * qrow[d];
      }
      if (dv) {
        double* dvrow = dv + kv_off;
        for (std::size_t d = 0; d < dh; ++d) dvrow[d] += p * dorow[d];
      }
    }
  }
}

inline double* ptr_or_null(std::span<double> s) { return s.empty() ? nullptr : s.data(); }

}  // namespace

namespace serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t blk = 0; blk < row_blocks(m); ++blk)
    matmul_block(a.data(), b.data(), c.data(), blk, m, k, n, accumulate);
}

void matmul_bt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
  const auto bt = transposed(b.data(), n, k);
  for (std::size_t blk = 0; blk < row_blocks(m); ++blk) matmul_block(a.data(), bt.data(), c.data(), blk, m, k, n, true);
}

void matmul_at_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t blk = 0; blk < row_blocks(k); ++blk) matmul_at_block(a.data(), b.data(), c.data(), blk, m, k, n);
}

void attention_forward(const AttentionShape& s, std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<double> out, std::span<double> probs) {
  std::vector<double> scratch;
  for (std::size_t g = 0; g < s.groups; ++g)
    for (std::size_t i = 0; i < s.q_rows; ++i)
      attention_row(s, q.data(), k.data(), v.data(), out.data(), probs.data(), g, i, scratch);
}

void attention_backward(const AttentionShape& s, std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, std::span<const double> probs,
                        std::span<const double> dout, std::span<double> dq, std::span<double> dk,
                        std::span<double> dv) {
  std::vector<double> dp;
  for (std::size_t g = 0; g < s.groups; ++g)
    for (std::size_t h = 0; h < s.heads; ++h)
      attention_group_backward(s, q.data(), k.data(), v.data(), probs.data(), dout.data(),
                               ptr_or_null(dq), ptr_or_null(dk), ptr_or_null(dv), g, h, dp);
}

}  // namespace serial

namespace parallel {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const long blocks = static_cast<long>(row_blocks(m));
#pragma omp parallel for schedule(static)
  for (long blk = 0; blk < blocks; ++blk)
    matmul_block(a.data(), b.data(), c.data(), static_cast<std::size_t>(blk), m, k, n, accumulate);
}

void matmul_bt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
  const auto bt = transposed(b.data(), n, k);
  const long blocks = static_cast<long>(row_blocks(m));
#pragma omp parallel for schedule(static)
  for (long blk = 0; blk < blocks; ++blk)
    matmul_block(a.data(), bt.data(), c.data(), static_cast<std::size_t>(blk), m, k, n, true);
}

void matmul_at_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
  const long blocks = static_cast<long>(row_blocks(k));
#pragma omp parallel for schedule(static)
  for (long blk = 0; blk < blocks; ++blk)
    matmul_at_block(a.data(), b.data(), c.data(), static_cast<std::size_t>(blk), m, k, n);
}

void attention_forward(const AttentionShape& s, std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<double> out, std::span<double> probs) {
  const long total = static_cast<long>(s.groups * s.q_rows);
#pragma omp parallel
  {
    std::vector<double> scratch;
#pragma omp for schedule(static)
    for (long t = 0; t < total; ++t) {
      const auto g = static_cast<std::size_t>(t) / s.q_rows;
      const auto i = static_cast<std::size_t>(t) % s.q_rows;
      attention_row(s, q.data(), k.data(), v.data(), out.data(), probs.data(), g, i, scratch);
    }
  }
}

void attention_backward(const AttentionShape& s, std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, std::span<const double> probs,
                        std::span<const double> dout, std::span<double> dq, std::span<double> dk,
                        std::span<double> dv) {
  const long total = static_cast<long>(s.groups * s.heads);
#pragma omp parallel
  {
    std::vector<double> dp;
#pragma omp for schedule(static)
    for (long t = 0; t < total; ++t) {
      const auto g = static_cast<std::size_t>(t) / s.heads;
      const auto h = static_cast<std::size_t>(t) % s.heads;
      attention_group_backward(s, q.data(), k.data(), v.data(), probs.data(), dout.data(),
                               ptr_or_null(dq), ptr_or_null(dk), ptr_or_null(dv), g, h, dp);
    }
  }
}

}  // namespace parallel

bool openmp_enabled() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

namespace {
bool go_parallel(std::size_t work) {
#ifdef _OPENMP
  return work >= kParallelThreshold && omp_get_max_threads() > 1;
#else
  (void)work;
  return false;
#endif
}
}  // namespace

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  if (go_parallel(m * k * n)) return parallel::matmul(a, b, c, m, k, n, accumulate);
  serial::matmul(a, b, c, m, k, n, accumulate);
}

void matmul_bt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
  if (go_parallel(m * k * n)) return parallel::matmul_bt_acc(a, b, c, m, k, n);
  serial::matmul_bt_acc(a, b, c, m, k, n);
}

void matmul_at_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
  if (go_parallel(m * k * n)) return parallel::matmul_at_acc(a, b, c, m, k, n);
  serial::matmul_at_acc(a, b, c, m, k, n);
}

void attention_forward(const AttentionShape& s, std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<double> out, std::span<double> probs) {
  if (go_parallel(s.groups * s.q_rows * s.kv_rows * s.dim))
    return parallel::attention_forward(s, q, k, v, out, probs);
  serial::attention_forward(s, q, k, v, out, probs);
}

void attention_backward(const AttentionShape& s, std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, std::span<const double> probs,
                        std::span<const double> dout, std::span<double> dq, std::span<double> dk,
                        std::span<double> dv) {
  if (go_parallel(s.groups * s.q_rows * s.kv_rows * s.dim) && s.groups * s.heads > 1)
    return parallel::attention_backward(s, q, k, v, probs, dout, dq, dk, dv);
  serial::attention_backward(s, q, k, v, probs, dout, dq, dk, dv);
}

}  // namespace rrg::kernels
