#include <algorithm>
#include <vector>

#include "pedcc/kernels.hpp"

#if defined(__x86_64__) || defined(__i386__)
#include <immintrin.h>
#define PEDCC_HAVE_AVX2 1
#endif

namespace pedcc::kernels {

#ifdef PEDCC_HAVE_AVX2
namespace {

#define PEDCC_AVX2 __attribute__((target("avx2")))

// crow[0..n) += s · brow[0..n), one product and one add per element.
PEDCC_AVX2 inline void scaled_row_add(double s, const double* brow, double* crow, std::size_t n) {
  const __m256d vs = _mm256_set1_pd(s);
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    __m256d prod = _mm256_mul_pd(vs, _mm256_loadu_pd(brow + j));
    _mm256_storeu_pd(crow + j, _mm256_add_pd(_mm256_loadu_pd(crow + j), prod));
  }
  for (; j < n; ++j) crow[j] += s * brow[j];
}

PEDCC_AVX2 void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                        std::size_t n) {
  std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) scaled_row_add(a[i * k + p], b + p * n, c + i * n, n);
}

PEDCC_AVX2 void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                        std::size_t n) {
  std::fill(c, c + m * n, 0.0);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t i = 0; i < m; ++i) scaled_row_add(a[p * m + i], b + p * n, c + i * n, n);
}

std::vector<double> transposed(const double* b, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = b[r * cols + c];
  return t;
}

PEDCC_AVX2 void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                        std::size_t n) {
  // bt is K×N; each c[i][j] still accumulates from 0 in ascending p.
  const std::vector<double> bt = transposed(b, n, k);
  gemm_nn(a, bt.data(), c, m, k, n);
}

PEDCC_AVX2 void axpy(double alpha, const double* x, double* y, std::size_t n) {
  scaled_row_add(alpha, x, y, n);
}

PEDCC_AVX2 void hadamard(const double* x, const double* y, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

PEDCC_AVX2 void momentum_step(double* p, const double* g, double* v, double lr, double momentum,
                              std::size_t n) {
  const __m256d vmu = _mm256_set1_pd(momentum);
  const __m256d vlr = _mm256_set1_pd(lr);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vel = _mm256_add_pd(_mm256_mul_pd(vmu, _mm256_loadu_pd(v + i)), _mm256_loadu_pd(g + i));
    _mm256_storeu_pd(v + i, vel);
    _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), _mm256_mul_pd(vlr, vel)));
  }
  for (; i < n; ++i) {
    v[i] = momentum * v[i] + g[i];
    p[i] -= lr * v[i];
  }
}

PEDCC_AVX2 void pairwise_sqdist(const double* a, const double* b, double* d, std::size_t n,
                                std::size_t m, std::size_t dim) {
  const std::vector<double> bt = transposed(b, m, dim);  // dim×M
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * dim;
    double* drow = d + i * m;
    std::size_t j = 0;
    for (; j + 4 <= m; j += 4) {
      __m256d acc = _mm256_setzero_pd();
      for (std::size_t p = 0; p < dim; ++p) {
        __m256d diff = _mm256_sub_pd(_mm256_set1_pd(arow[p]), _mm256_loadu_pd(&bt[p * m + j]));
        acc = _mm256_add_pd(acc, _mm256_mul_pd(diff, diff));
      }
      _mm256_storeu_pd(drow + j, acc);
    }
    for (; j < m; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < dim; ++p) {
        const double diff = arow[p] - bt[p * m + j];
        s += diff * diff;
      }
      drow[j] = s;
    }
  }
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table{gemm_nn, gemm_tn, gemm_nt, axpy,
                                 hadamard, momentum_step, pairwise_sqdist};
  return &table;
}

#else

const KernelTable* avx2_table() { return nullptr; }

#endif

}  // namespace pedcc::kernels
