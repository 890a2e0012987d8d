// Compiled with -mavx2 -mfma; only reached after a CPUID check.

#include <immintrin.h>

#include "dscl/kernels.hpp"

namespace dscl::kernels {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

double sq_dist(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    acc = _mm256_fmadd_pd(d, d, acc);
  }
  double s = hsum(acc);
  for (; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void hadamard(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void accumulate(const double* x, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) y[i] += x[i];
}

void gemm_nn(const double* a, const double* b, double* c, std::size_t p, std::size_t q,
             std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) {
    double* ci = c + i * r;
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = a[i * q + k];
      if (aik == 0.0) continue;
      axpy(aik, b + k * r, ci, r);
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t p, std::size_t q,
             std::size_t r) {
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < r; ++j) c[i * r + j] += dot(a + i * q, b + j * q, q);
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t p, std::size_t q,
             std::size_t r) {
  for (std::size_t k = 0; k < q; ++k) {
    const double* bk = b + k * r;
    for (std::size_t i = 0; i < p; ++i) {
      const double aki = a[k * p + i];
      if (aki == 0.0) continue;
      axpy(aki, bk, c + i * r, r);
    }
  }
}

}  // namespace

const KernelTable& avx2_impl_table() {
  static const KernelTable table{"avx2", dot,     axpy,    sq_dist, hadamard,
                                 accumulate, gemm_nn, gemm_nt, gemm_tn};
  return table;
}

}  // namespace dscl::kernels
