#pragma once

// Dense f64 inner-loop kernels.
//
// Each kernel has a portable scalar reference and, on x86-64, an AVX2+FMA
// variant compiled in its own translation unit. The active table is chosen
// once at first use from CPUID; set DSCL_KERNELS=scalar to force the
// reference path (useful for cross-machine bit reproducibility).

#include <cstddef>
#include <string_view>

namespace dscl::kernels {

struct KernelTable {
  std::string_view name;

  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // sum_i (a[i] - b[i])^2
  double (*sq_dist)(const double* a, const double* b, std::size_t n);
  // out[i] = a[i] * b[i]
  void (*hadamard)(const double* a, const double* b, double* out, std::size_t n);
  // y[i] += x[i]
  void (*accumulate)(const double* x, double* y, std::size_t n);

  // C[P x R] += A[P x Q] * B[Q x R]
  void (*gemm_nn)(const double* a, const double* b, double* c, std::size_t p, std::size_t q,
                  std::size_t r);
  // C[P x R] += A[P x Q] * B[R x Q]^T
  void (*gemm_nt)(const double* a, const double* b, double* c, std::size_t p, std::size_t q,
                  std::size_t r);
  // C[P x R] += A[Q x P]^T * B[Q x R]
  void (*gemm_tn)(const double* a, const double* b, double* c, std::size_t p, std::size_t q,
                  std::size_t r);
};

const KernelTable& scalar_table();

// nullptr when the running CPU (or the build) lacks AVX2/FMA.
const KernelTable* avx2_table();

// The table all library code dispatches through.
const KernelTable& active();

}  // namespace dscl::kernels
