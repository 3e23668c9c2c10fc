// Serial reference kernels against their OpenMP counterparts.
// Thread count: COMPAD_BENCH_THREADS, else OpenMP's default.

#include <cstdlib>
#include <random>
#include <vector>

#include <benchmark/benchmark.h>
#include <omp.h>

#include "compad/kernels.hpp"

namespace k = compad::kernels;

namespace {

std::vector<double> random_buffer(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

void use_threads() {
  const char* env = std::getenv("COMPAD_BENCH_THREADS");
  k::set_num_threads(env ? std::atoi(env) : omp_get_max_threads());
}

template <bool Parallel>
void BM_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const k::Gemm g{n, n, n, false, true, false};
  const auto a = random_buffer(n * n, 1), b = random_buffer(n * n, 2);
  std::vector<double> c(n * n);
  use_threads();
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::gemm_parallel(g, a, b, c);
    } else {
      k::gemm_serial(g, a, b, c);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["threads"] = Parallel ? k::num_threads() : 1;
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

// Channel widths follow the temporal stack: D -> D/2 at length N.
template <bool Parallel>
void BM_conv1d(benchmark::State& state) {
  const auto length = static_cast<std::size_t>(state.range(0));
  const auto width = static_cast<std::size_t>(state.range(1));
  const k::Conv1d g{width, length, width / 2, 3, 1, 1};
  const auto x = random_buffer(g.c_in * g.length, 3);
  const auto w = random_buffer(g.c_out * g.c_in * g.kernel, 4);
  std::vector<double> y(g.c_out * g.out_length());
  use_threads();
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::conv1d_parallel(g, x, w, y);
    } else {
      k::conv1d_serial(g, x, w, y);
    }
    benchmark::DoNotOptimize(y.data());
  }
  state.counters["threads"] = Parallel ? k::num_threads() : 1;
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(g.work()));
}

}  // namespace

BENCHMARK(BM_gemm<false>)->Name("gemm/serial")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_conv1d<false>)->Name("conv1d/serial")->Args({128, 32})->Args({1024, 32})->Args({1024, 128});
BENCHMARK(BM_conv1d<true>)->Name("conv1d/parallel")->Args({128, 32})->Args({1024, 32})->Args({1024, 128});

BENCHMARK_MAIN();
