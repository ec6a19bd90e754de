// Serial reference vs OpenMP kernels on the extents the detector actually hits.
//
//   ./build/bench/bench_kernels --benchmark_filter=Gemm
//   OMP_NUM_THREADS=4 ./build/bench/bench_kernels

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "sdetr/attention.hpp"
#include "sdetr/kernels.hpp"
#include "sdetr/ops.hpp"

namespace {

using namespace sdetr;

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = 2.0 * uniform01(rng) - 1.0;
  return v;
}

template <auto Gemm>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    Gemm({n, n, n}, a, b, c, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Gemm<kernels::serial::gemm_nn>)->Name("Gemm/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_Gemm<kernels::omp::gemm_nn>)->Name("Gemm/omp")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_Gemm<kernels::serial::gemm_nt>)->Name("GemmNT/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_Gemm<kernels::omp::gemm_nt>)->Name("GemmNT/omp")->RangeMultiplier(2)->Range(32, 256);

template <auto Softmax>
void BM_Softmax(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto x = random_vec(n * n, 3);
  std::vector<double> y(n * n);
  for (auto _ : state) {
    Softmax(n, n, x, y);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_Softmax<kernels::serial::softmax_rows>)->Name("Softmax/serial")->Arg(256)->Arg(1024);
BENCHMARK(BM_Softmax<kernels::omp::softmax_rows>)->Name("Softmax/omp")->Arg(256)->Arg(1024);

template <auto Im2col>
void BM_Im2col(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const std::size_t ch = 16;
  auto img = random_vec(ch * side * side, 4);
  const std::size_t out = (side + 2 - 3) / 2 + 1;
  std::vector<double> cols(ch * 9 * out * out);
  for (auto _ : state) {
    Im2col(ch, side, side, 3, 2, 1, img, cols);
    benchmark::DoNotOptimize(cols.data());
  }
}
BENCHMARK(BM_Im2col<kernels::serial::im2col>)->Name("Im2col/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_Im2col<kernels::omp::im2col>)->Name("Im2col/omp")->Arg(64)->Arg(256);

// End-to-end attention block (dispatches to the active kernels) for context.
void BM_AttentionForward(benchmark::State& state) {
  const auto tokens = static_cast<std::size_t>(state.range(0));
  const auto heads = static_cast<std::size_t>(state.range(1));
  Tensor q({tokens, 64}, random_vec(tokens * 64, 5));
  Tensor k({tokens, 64}, random_vec(tokens * 64, 6));
  Tensor v({tokens, 64}, random_vec(tokens * 64, 7));
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(attention_forward(q, k, v, heads).data().data());
}
BENCHMARK(BM_AttentionForward)->Args({256, 1})->Args({256, 8})->Args({1024, 1});

}  // namespace

BENCHMARK_MAIN();
