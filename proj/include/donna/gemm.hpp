// gemm.hpp: thin wrapper over OpenBLAS dgemm.
//
// OpenBLAS is pinned to one thread: the pipeline parallelises across
// independent training jobs, and nested BLAS threading would both oversubscribe
// the machine and make reduction order depend on the thread count.
#pragma once

#include <cblas-openblas.h>

#include <mutex>

namespace donna {

inline void ensure_blas_single_threaded() {
  static std::once_flag flag;
  std::call_once(flag, [] { openblas_set_num_threads(1); });
}

// C[m x n] (+)= A[m x k] * B[k x n], all row-major contiguous
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                 const double* a, int lda, const double* b, int ldb,
                 double beta, double* c, int ldc) {
  ensure_blas_single_threaded();
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

}  // namespace donna
