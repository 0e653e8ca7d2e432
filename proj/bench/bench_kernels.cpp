#include <benchmark/benchmark.h>

#include <vector>

#include "fptt/kernels.hpp"
#include "fptt/rng.hpp"

using namespace fptt;
namespace k = fptt::kernels;

namespace {

std::vector<float> random_vector(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
  std::vector<float> c(n * n);
  const k::GemmArgs g{false, static_cast<bool>(state.range(1)), n, n, n, false};
  for (auto _ : state) {
    if constexpr (Parallel) k::parallel::gemm(g, a.data(), b.data(), c.data());
    else k::serial::gemm(g, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] =
      benchmark::Counter(2.0 * double(n) * n * n, benchmark::Counter::kIsIterationInvariantRate, benchmark::Counter::kIs1000);
  state.counters["threads"] = Parallel ? k::max_threads() : 1;
}

template <bool Parallel>
void BM_Im2col(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0)), hw = static_cast<std::size_t>(state.range(1));
  const auto x = random_vector(c * hw * hw, 3);
  std::vector<float> cols(c * 9 * hw * hw);
  for (auto _ : state) {
    if constexpr (Parallel) k::parallel::im2col(x.data(), c, hw, hw, 3, 1, 1, hw, hw, cols.data());
    else k::serial::im2col(x.data(), c, hw, hw, 3, 1, 1, hw, hw, cols.data());
    benchmark::DoNotOptimize(cols.data());
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * cols.size() * sizeof(float)));
}

template <bool Parallel>
void BM_Col2im(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0)), hw = static_cast<std::size_t>(state.range(1));
  const auto cols = random_vector(c * 9 * hw * hw, 4);
  std::vector<float> x(c * hw * hw);
  for (auto _ : state) {
    std::fill(x.begin(), x.end(), 0.0f);
    if constexpr (Parallel) k::parallel::col2im(cols.data(), c, hw, hw, 3, 1, 1, hw, hw, x.data());
    else k::serial::col2im(cols.data(), c, hw, hw, 3, 1, 1, hw, hw, x.data());
    benchmark::DoNotOptimize(x.data());
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * cols.size() * sizeof(float)));
}

void gemm_sizes(benchmark::internal::Benchmark* b) {
  for (long n : {32, 64, 128, 256, 512})
    for (long tb : {0, 1}) b->Args({n, tb});
  b->ArgNames({"n", "trans_b"});
}

void conv_sizes(benchmark::internal::Benchmark* b) {
  for (long c : {16, 64})
    for (long hw : {16, 64}) b->Args({c, hw});
  b->ArgNames({"channels", "side"});
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Apply(gemm_sizes)->UseRealTime();
BENCHMARK(BM_Gemm<true>)->Name("gemm/openmp")->Apply(gemm_sizes)->UseRealTime();
BENCHMARK(BM_Im2col<false>)->Name("im2col/serial")->Apply(conv_sizes)->UseRealTime();
BENCHMARK(BM_Im2col<true>)->Name("im2col/openmp")->Apply(conv_sizes)->UseRealTime();
BENCHMARK(BM_Col2im<false>)->Name("col2im/serial")->Apply(conv_sizes)->UseRealTime();
BENCHMARK(BM_Col2im<true>)->Name("col2im/openmp")->Apply(conv_sizes)->UseRealTime();

BENCHMARK_MAIN();
