// Compares the OpenMP kernels against the serial reference implementations.
// Run with --benchmark_filter=conv or matmul to narrow down.

#include <benchmark/benchmark.h>

#include "edgepop/kernels.hpp"
#include "edgepop/reference.hpp"
#include "edgepop/rng.hpp"

using edgepop::RngStream;
using edgepop::Tensor;

namespace {

Tensor<float> random_tensor(std::vector<int64_t> shape, uint64_t seed) {
  RngStream rng(seed);
  Tensor<float> t{std::move(shape)};
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.normal());
  return t;
}

void bm_matmul_parallel(benchmark::State& state) {
  const int64_t n = state.range(0);
  auto a = random_tensor({n, n}, 1);
  auto b = random_tensor({n, n}, 2);
  for (auto _ : state) {
    auto c = edgepop::kernels::matmul(a, b);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}

void bm_matmul_serial(benchmark::State& state) {
  const int64_t n = state.range(0);
  auto a = random_tensor({n, n}, 1);
  auto b = random_tensor({n, n}, 2);
  for (auto _ : state) {
    auto c = edgepop::ref::matmul(a, b);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}

void bm_conv2d_parallel(benchmark::State& state) {
  const int64_t c = state.range(0);
  auto x = random_tensor({8, c, 32, 32}, 3);
  auto w = random_tensor({c, c, 3, 3}, 4);
  for (auto _ : state) {
    auto y = edgepop::kernels::conv2d(x, w, 1, 1);
    benchmark::DoNotOptimize(y.data());
  }
}

void bm_conv2d_serial(benchmark::State& state) {
  const int64_t c = state.range(0);
  auto x = random_tensor({8, c, 32, 32}, 3);
  auto w = random_tensor({c, c, 3, 3}, 4);
  for (auto _ : state) {
    auto y = edgepop::ref::conv2d(x, w, 1, 1);
    benchmark::DoNotOptimize(y.data());
  }
}

void bm_conv_score_grad_parallel(benchmark::State& state) {
  const int64_t c = state.range(0);
  auto x = random_tensor({8, c, 16, 16}, 5);
  auto dy = random_tensor({8, c, 16, 16}, 6);
  auto w = random_tensor({c, c, 3, 3}, 7);
  for (auto _ : state) {
    auto ds = edgepop::kernels::ste_conv_score_grad(x, dy, w, 1, 1);
    benchmark::DoNotOptimize(ds.data());
  }
}

void bm_conv_score_grad_serial(benchmark::State& state) {
  const int64_t c = state.range(0);
  auto x = random_tensor({8, c, 16, 16}, 5);
  auto dy = random_tensor({8, c, 16, 16}, 6);
  auto w = random_tensor({c, c, 3, 3}, 7);
  for (auto _ : state) {
    auto ds = edgepop::ref::ste_conv_score_grad(x, dy, w, 1, 1);
    benchmark::DoNotOptimize(ds.data());
  }
}

}  // namespace

BENCHMARK(bm_matmul_parallel)->Arg(128)->Arg(384);
BENCHMARK(bm_matmul_serial)->Arg(128)->Arg(384);
BENCHMARK(bm_conv2d_parallel)->Arg(16)->Arg(32);
BENCHMARK(bm_conv2d_serial)->Arg(16)->Arg(32);
BENCHMARK(bm_conv_score_grad_parallel)->Arg(16);
BENCHMARK(bm_conv_score_grad_serial)->Arg(16);

BENCHMARK_MAIN();
