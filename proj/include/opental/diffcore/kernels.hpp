#pragma once

#include <cstddef>
#include <span>

// Dense kernels behind the tape. The default namespace holds OpenMP versions
// parallel over output rows; `serial` holds the single-threaded reference
// implementations kept for testing and benchmarking. Every output element is
// accumulated in the same order in both, so results are bit-identical
// regardless of thread count.

namespace opental::diff::kernels {

/// Below this many output elements the parallel kernels run serially.
inline constexpr std::size_t kParallelThreshold = 4096;

// c(m×n) = a(m×k) · b(k×n)
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);
// c(k×n) = aᵀ · b with a(m×k), b(m×n)
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
// c(m×n) = a · bᵀ with a(m×k), b(n×k)
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
// out(n) = column sums of a(m×n)
void column_sum(std::span<const double> a, std::span<double> out, std::size_t m, std::size_t n);
// x(m×n) += row(n) broadcast over rows
void add_row(std::span<double> x, std::span<const double> row, std::size_t m, std::size_t n);

namespace serial {
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
void column_sum(std::span<const double> a, std::span<double> out, std::size_t m, std::size_t n);
void add_row(std::span<double> x, std::span<const double> row, std::size_t m, std::size_t n);
}  // namespace serial

/// out[i] = f(x[i])
template <typename F>
void map(std::span<const double> x, std::span<double> out, F f) {
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for if (x.size() >= kParallelThreshold) schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = f(x[i]);
}

/// out[i] = f(x[i], y[i])
template <typename F>
void zip(std::span<const double> x, std::span<const double> y, std::span<double> out, F f) {
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for if (x.size() >= kParallelThreshold) schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = f(x[i], y[i]);
}

}  // namespace opental::diff::kernels
