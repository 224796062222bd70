#pragma once

#include <cblas.h>

namespace milens::detail {

// Row-major dgemm: C = alpha * op(A) @ op(B) + beta * C.
// m, n, k refer to the shapes after transposition.
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a,
                 const double* b, double beta, double* c) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, trans_a ? m : k, b,
              trans_b ? k : n, beta, c, n);
}

}  // namespace milens::detail
