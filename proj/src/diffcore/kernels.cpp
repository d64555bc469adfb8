#include "opental/diffcore/kernels.hpp"

#include <algorithm>

namespace opental::diff::kernels {

namespace {

// Row i of c = a[i,:] · b, accumulated over k in ascending order.
inline void matmul_row(const double* a, const double* b, double* c, std::size_t i,
                       std::size_t k, std::size_t n) {
  double* crow = c + i * n;
  std::fill(crow, crow + n, 0.0);
  const double* arow = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = arow[p];
    const double* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

// Row p of c = Σ_i a[i,p] · b[i,:], accumulated over i in ascending order.
inline void matmul_tn_row(const double* a, const double* b, double* c, std::size_t p,
                          std::size_t m, std::size_t k, std::size_t n) {
  double* crow = c + p * n;
  std::fill(crow, crow + n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double av = a[i * k + p];
    if (av == 0.0) continue;
    const double* brow = b + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

inline void matmul_nt_row(const double* a, const double* b, double* c, std::size_t i,
                          std::size_t k, std::size_t n) {
  const double* arow = a + i * k;
  for (std::size_t j = 0; j < n; ++j) {
    const double* brow = b + j * k;
    double acc = 0.0;
    for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
    c[i * n + j] = acc;
  }
}

}  // namespace

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n) {
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for if (m * n >= kParallelThreshold) schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) matmul_row(a.data(), b.data(), c.data(), i, k, n);
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n) {
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(k);
#pragma omp parallel for if (k * n >= kParallelThreshold) schedule(static)
  for (std::ptrdiff_t p = 0; p < rows; ++p) matmul_tn_row(a.data(), b.data(), c.data(), p, m, k, n);
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n) {
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for if (m * n >= kParallelThreshold) schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) matmul_nt_row(a.data(), b.data(), c.data(), i, k, n);
}

void column_sum(std::span<const double> a, std::span<double> out, std::size_t m, std::size_t n) {
  const std::ptrdiff_t cols = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for if (m * n >= kParallelThreshold) schedule(static)
  for (std::ptrdiff_t j = 0; j < cols; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += a[i * n + j];
    out[j] = acc;
  }
}

void add_row(std::span<double> x, std::span<const double> row, std::size_t m, std::size_t n) {
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for if (m * n >= kParallelThreshold) schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < n; ++j) x[i * n + j] += row[j];
  }
}

namespace serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_row(a.data(), b.data(), c.data(), i, k, n);
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) matmul_tn_row(a.data(), b.data(), c.data(), p, m, k, n);
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_nt_row(a.data(), b.data(), c.data(), i, k, n);
}

void column_sum(std::span<const double> a, std::span<double> out, std::size_t m, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += a[i * n + j];
    out[j] = acc;
  }
}

void add_row(std::span<double> x, std::span<const double> row, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) x[i * n + j] += row[j];
  }
}

}  // namespace serial

}  // namespace opental::diff::kernels
