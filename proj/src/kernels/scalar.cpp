#include "dscl/kernels.hpp"

namespace dscl::kernels {
namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double sq_dist(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void hadamard(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void accumulate(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += x[i];
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

const KernelTable& scalar_table() {
  static const KernelTable table{"scalar", dot,     axpy,    sq_dist, hadamard,
                                 accumulate, gemm_nn, gemm_nt, gemm_tn};
  return table;
}

}  // namespace dscl::kernels
