#include <benchmark/benchmark.h>

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "opental/diffcore/kernels.hpp"

namespace {

namespace k = opental::diff::kernels;

std::vector<double> random_values(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

// Shapes follow the detector's first layer: rows = batch timesteps,
// k = window width, n = hidden units.
template <auto Kernel>
void bm_matmul(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const std::size_t kk = 144;
  const std::size_t n = 32;
  const auto a = random_values(m * kk, 1);
  const auto b = random_values(kk * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    Kernel(a, b, c, m, kk, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(m * kk * n));
}

template <auto Kernel>
void bm_matmul_tn(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const std::size_t kk = 144;
  const std::size_t n = 32;
  const auto a = random_values(m * kk, 3);
  const auto b = random_values(m * n, 4);
  std::vector<double> c(kk * n);
  for (auto _ : state) {
    Kernel(a, b, c, m, kk, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(m * kk * n));
}

template <auto Kernel>
void bm_matmul_nt(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const std::size_t kk = 32;
  const std::size_t n = 144;
  const auto a = random_values(m * kk, 5);
  const auto b = random_values(n * kk, 6);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    Kernel(a, b, c, m, kk, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(m * kk * n));
}

template <auto Kernel>
void bm_column_sum(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const std::size_t n = 32;
  const auto a = random_values(m * n, 7);
  std::vector<double> out(n);
  for (auto _ : state) {
    Kernel(a, out, m, n);
    benchmark::DoNotOptimize(out.data());
  }
}

template <auto Kernel>
void bm_add_row(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const std::size_t n = 32;
  auto x = random_values(m * n, 8);
  const auto row = random_values(n, 9);
  for (auto _ : state) {
    Kernel(x, row, m, n);
    benchmark::DoNotOptimize(x.data());
  }
}

constexpr int kMinRows = 256;
constexpr int kMaxRows = 4096;

}  // namespace

BENCHMARK(bm_matmul<k::matmul>)->Name("matmul/omp")->RangeMultiplier(4)->Range(kMinRows, kMaxRows);
BENCHMARK(bm_matmul<k::serial::matmul>)->Name("matmul/serial")->RangeMultiplier(4)->Range(kMinRows, kMaxRows);
BENCHMARK(bm_matmul_tn<k::matmul_tn>)->Name("matmul_tn/omp")->RangeMultiplier(4)->Range(kMinRows, kMaxRows);
BENCHMARK(bm_matmul_tn<k::serial::matmul_tn>)->Name("matmul_tn/serial")->RangeMultiplier(4)->Range(kMinRows, kMaxRows);
BENCHMARK(bm_matmul_nt<k::matmul_nt>)->Name("matmul_nt/omp")->RangeMultiplier(4)->Range(kMinRows, kMaxRows);
BENCHMARK(bm_matmul_nt<k::serial::matmul_nt>)->Name("matmul_nt/serial")->RangeMultiplier(4)->Range(kMinRows, kMaxRows);
BENCHMARK(bm_column_sum<k::column_sum>)->Name("column_sum/omp")->RangeMultiplier(4)->Range(kMinRows, kMaxRows);
BENCHMARK(bm_column_sum<k::serial::column_sum>)->Name("column_sum/serial")->RangeMultiplier(4)->Range(kMinRows, kMaxRows);
BENCHMARK(bm_add_row<k::add_row>)->Name("add_row/omp")->RangeMultiplier(4)->Range(kMinRows, kMaxRows);
BENCHMARK(bm_add_row<k::serial::add_row>)->Name("add_row/serial")->RangeMultiplier(4)->Range(kMinRows, kMaxRows);

BENCHMARK_MAIN();
