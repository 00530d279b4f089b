#pragma once

#include <cstddef>

#ifdef QPAT_HAVE_OPENBLAS
#include <cblas.h>
#include <cstdlib>

namespace qpat::detail {

// OpenBLAS picks its kernel from CPUID at load time; inside VMs the CPU
// model string is often blank and the generic kernel gets selected even
// when AVX-512 is available. Hint the best supported kernel before the
// library initializes (constructor priority runs ahead of unprioritized
// library constructors when OpenBLAS is linked statically). An existing
// OPENBLAS_CORETYPE in the environment always wins.
__attribute__((constructor(101))) inline void openblas_coretype_hint() {
  if (__builtin_cpu_supports("avx512f") && __builtin_cpu_supports("avx512dq") &&
      __builtin_cpu_supports("avx512vl") && __builtin_cpu_supports("avx512bw")) {
    setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 0);
  } else if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) {
    setenv("OPENBLAS_CORETYPE", "HASWELL", 0);
  }
}

} // namespace qpat::detail
#endif

namespace qpat {

/// Row-major C = alpha * op(A) * op(B) + beta * C.
/// op(A) is M x K, op(B) is K x N, C is M x N.
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 double alpha, const double* a, std::size_t lda, const double* b,
                 std::size_t ldb, double beta, double* c, std::size_t ldc) {
#ifdef QPAT_HAVE_OPENBLAS
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(lda),
              b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
#else
  // Portable fallback: blocked loops, fixed accumulation order.
  constexpr std::size_t block = 64;
  if (beta == 0.0) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] = 0.0;
  } else if (beta != 1.0) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] *= beta;
  }
  auto at = [&](std::size_t i, std::size_t kk) { return trans_a ? a[kk * lda + i] : a[i * lda + kk]; };
  auto bt = [&](std::size_t kk, std::size_t j) { return trans_b ? b[j * ldb + kk] : b[kk * ldb + j]; };
  for (std::size_t j0 = 0; j0 < n; j0 += block) {
    const std::size_t j1 = (j0 + block < n) ? j0 + block : n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double av = alpha * at(i, kk);
        for (std::size_t j = j0; j < j1; ++j) c[i * ldc + j] += av * bt(kk, j);
      }
  }
#endif
}

} // namespace qpat
