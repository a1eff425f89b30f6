#pragma once

#include <cblas.h>

#include <cstddef>

namespace x2f::ad::detail {

// C[M, N] += op(A) * op(B). A is stored (M, K), or (K, M) when trans_a;
// B is stored (K, N), or (N, K) when trans_b. OpenBLAS runs on the calling
// thread only, so results do not depend on a thread count.
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 const double* a, const double* b, double* c) {
  static const bool single = (openblas_set_num_threads(1), true);
  (void)single;
  if (m == 0 || n == 0 || k == 0) return;
  const auto mi = static_cast<blasint>(m), ni = static_cast<blasint>(n), ki = static_cast<blasint>(k);
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, mi, ni, ki,
              1.0, a, trans_a ? mi : ki, b, trans_b ? ki : ni, 1.0, c, ni);
}

}  // namespace x2f::ad::detail
