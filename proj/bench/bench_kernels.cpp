// Serial reference vs OpenMP kernels at the shapes the model actually runs.
#include <benchmark/benchmark.h>

#include <vector>

#include "rrg/kernels.h"
#include "rrg/rng.h"

namespace {

using namespace rrg;

std::vector<double> random_buffer(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal(0.0, 1.0);
  return v;
}

template <bool Parallel>
void BM_Matmul(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const auto a = random_buffer(m * k, 1), b = random_buffer(k * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::parallel::matmul(a, b, c, m, k, n, false);
    else kernels::serial::matmul(a, b, c, m, k, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["MAC/s"] = benchmark::Counter(static_cast<double>(m * k * n), benchmark::Counter::kIsIterationInvariantRate);
}

template <bool Parallel>
void BM_MatmulAt(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const auto a = random_buffer(m * k, 1), b = random_buffer(m * n, 2);
  std::vector<double> c(k * n);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::parallel::matmul_at_acc(a, b, c, m, k, n);
    else kernels::serial::matmul_at_acc(a, b, c, m, k, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["MAC/s"] = benchmark::Counter(static_cast<double>(m * k * n), benchmark::Counter::kIsIterationInvariantRate);
}

template <bool Parallel>
void BM_MatmulBt(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const auto a = random_buffer(m * k, 1), b = random_buffer(n * k, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::parallel::matmul_bt_acc(a, b, c, m, k, n);
    else kernels::serial::matmul_bt_acc(a, b, c, m, k, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["MAC/s"] = benchmark::Counter(static_cast<double>(m * k * n), benchmark::Counter::kIsIterationInvariantRate);
}

template <bool Parallel>
void BM_Attention(benchmark::State& state) {
  kernels::AttentionShape s;
  s.groups = static_cast<std::size_t>(state.range(0));
  s.q_rows = s.kv_rows = static_cast<std::size_t>(state.range(1));
  s.dim = 64;
  s.heads = 4;
  s.causal = true;
  const std::size_t rows = s.groups * s.q_rows;
  const auto q = random_buffer(rows * s.dim, 1), k = random_buffer(rows * s.dim, 2),
             v = random_buffer(rows * s.dim, 3), dout = random_buffer(rows * s.dim, 4);
  std::vector<double> out(rows * s.dim), probs(s.groups * s.heads * s.q_rows * s.kv_rows);
  std::vector<double> dq(q.size()), dk(k.size()), dv(v.size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::attention_forward(s, q, k, v, out, probs);
      kernels::parallel::attention_backward(s, q, k, v, probs, dout, dq, dk, dv);
    } else {
      kernels::serial::attention_forward(s, q, k, v, out, probs);
      kernels::serial::attention_backward(s, q, k, v, probs, dout, dq, dk, dv);
    }
    benchmark::DoNotOptimize(dq.data());
  }
}

// Region block FFN (K·N rows), decoder projection, output head.
#define MATMUL_SHAPES Args({96, 64, 256})->Args({96, 256, 64})->Args({40, 64, 64})->Args({40, 64, 192})->Args({512, 512, 512})

BENCHMARK(BM_Matmul<false>)->MATMUL_SHAPES;
BENCHMARK(BM_Matmul<true>)->MATMUL_SHAPES;
BENCHMARK(BM_MatmulAt<false>)->MATMUL_SHAPES;
BENCHMARK(BM_MatmulAt<true>)->MATMUL_SHAPES;
BENCHMARK(BM_MatmulBt<false>)->MATMUL_SHAPES;
BENCHMARK(BM_MatmulBt<true>)->MATMUL_SHAPES;
BENCHMARK(BM_Attention<false>)->Args({6, 16})->Args({1, 64})->Args({29, 64});
BENCHMARK(BM_Attention<true>)->Args({6, 16})->Args({1, 64})->Args({29, 64});

}  // namespace

BENCHMARK_MAIN();
