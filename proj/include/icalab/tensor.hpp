#pragma once

#include <cblas.h>
#include <omp.h>

#include <cstddef>
#include <mutex>
#include <vector>

extern "C" void openblas_set_num_threads(int);

namespace icalab {

namespace detail {

inline void raw_gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
                     const float* a, int lda, const float* b, int ldb, float beta, float* c,
                     int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c,
              ldc);
}

inline void raw_gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                     const double* a, int lda, const double* b, int ldb, double beta,
                     double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c,
              ldc);
}

// BLAS worker threads busy-wait and starve the OpenMP pool on small
// machines, so BLAS runs single-threaded and parallelism lives in one
// OpenMP pool: big GEMMs are split into row/column panels here, each
// panel computed whole by one thread.
inline void pin_blas_single_thread() {
  static std::once_flag flag;
  std::call_once(flag, [] { openblas_set_num_threads(1); });
}

}  // namespace detail

// Row-major C = alpha * op(A) op(B) + beta * C, deterministic on a
// fixed machine: every C element is produced by exactly one sgemm call.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda,
          const T* b, int ldb, T beta, T* c, int ldc) {
  detail::pin_blas_single_thread();
  int nth = omp_get_max_threads();
  if (nth > 1 && m >= 2 * nth && static_cast<long>(m) * n * k >= (1 << 20)) {
    // split rows of C; under trans_a the panel offset walks A's columns
#pragma omp parallel for schedule(static)
    for (int p = 0; p < nth; ++p) {
      int lo = static_cast<int>(static_cast<long>(m) * p / nth);
      int hi = static_cast<int>(static_cast<long>(m) * (p + 1) / nth);
      if (hi <= lo) continue;
      const T* ap = trans_a ? a + lo : a + static_cast<size_t>(lo) * lda;
      detail::raw_gemm(trans_a, trans_b, hi - lo, n, k, alpha, ap, lda, b, ldb, beta,
                       c + static_cast<size_t>(lo) * ldc, ldc);
    }
  } else if (nth > 1 && n >= 2 * nth && static_cast<long>(m) * n * k >= (1 << 20)) {
    // split columns of C
#pragma omp parallel for schedule(static)
    for (int p = 0; p < nth; ++p) {
      int lo = static_cast<int>(static_cast<long>(n) * p / nth);
      int hi = static_cast<int>(static_cast<long>(n) * (p + 1) / nth);
      if (hi <= lo) continue;
      const T* bp = trans_b ? b + static_cast<size_t>(lo) * ldb : b + lo;
      detail::raw_gemm(trans_a, trans_b, m, hi - lo, k, alpha, a, lda, bp, ldb, beta,
                       c + lo, ldc);
    }
  } else {
    detail::raw_gemm(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
  }
}

// Single-threaded GEMM for use inside OpenMP regions.
template <typename T>
void gemm_st(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda,
             const T* b, int ldb, T beta, T* c, int ldc) {
  detail::pin_blas_single_thread();
  detail::raw_gemm(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <typename T>
void fill_zero(std::vector<T>& v) {
  std::fill(v.begin(), v.end(), T(0));
}

template <typename T>
void ensure_size(std::vector<T>& v, size_t n) {
  if (v.size() < n) v.resize(n);
}

}  // namespace icalab
