// Reference vs fast (OpenMP) kernels on layer shapes from the S preset.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "yolod/kernels.hpp"

using namespace yolod;

namespace {

std::vector<float> noise(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  std::vector<float> v(n);
  for (float& x : v) x = u(rng);
  return v;
}

kernels::ConvGeometry geometry(const benchmark::State& st) {
  const int c = static_cast<int>(st.range(0)), hw = static_cast<int>(st.range(1)), k = static_cast<int>(st.range(2));
  return {1, c, hw, hw, c, k, 1, k / 2};
}

template <bool Fast>
void BM_conv_forward(benchmark::State& st) {
  const auto g = geometry(st);
  auto x = noise(static_cast<std::size_t>(g.in_channels) * g.in_h * g.in_w, 1);
  auto w = noise(static_cast<std::size_t>(g.out_channels) * g.patch(), 2);
  std::vector<float> y(static_cast<std::size_t>(g.out_channels) * g.out_h() * g.out_w());
  for (auto _ : st) {
    if constexpr (Fast) kernels::fast::conv2d_forward(g, x.data(), w.data(), nullptr, y.data());
    else kernels::reference::conv2d_forward(g, x.data(), w.data(), static_cast<const float*>(nullptr), y.data());
    benchmark::DoNotOptimize(y.data());
  }
  st.counters["GFLOPS"] = benchmark::Counter(2.0 * static_cast<double>(g.mult_adds()) * st.iterations(),
                                             benchmark::Counter::kIsRate, benchmark::Counter::kIs1000);
}

template <bool Fast>
void BM_gemm(benchmark::State& st) {
  const int n = static_cast<int>(st.range(0));
  auto a = noise(static_cast<std::size_t>(n) * n, 1), b = noise(static_cast<std::size_t>(n) * n, 2);
  std::vector<float> c(static_cast<std::size_t>(n) * n);
  for (auto _ : st) {
    if constexpr (Fast) kernels::fast::gemm(false, false, n, n, n, a.data(), n, b.data(), n, c.data(), n, false);
    else kernels::reference::gemm(false, false, n, n, n, a.data(), n, b.data(), n, c.data(), n, false);
    benchmark::DoNotOptimize(c.data());
  }
  st.counters["GFLOPS"] = benchmark::Counter(2.0 * n * n * static_cast<double>(n) * st.iterations(),
                                             benchmark::Counter::kIsRate, benchmark::Counter::kIs1000);
}

}  // namespace

BENCHMARK(BM_conv_forward<false>)->Name("conv/reference")->Args({32, 40, 3})->Args({64, 20, 3})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv_forward<true>)->Name("conv/fast")->Args({32, 40, 3})->Args({64, 20, 3})->Args({128, 10, 1})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_gemm<false>)->Name("gemm/reference")->Arg(128)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_gemm<true>)->Name("gemm/fast")->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
