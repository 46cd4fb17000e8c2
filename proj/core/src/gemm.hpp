#pragma once

#include <cstddef>

namespace convseq::detail {

// Row-major kernels; all accumulate into C.
// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c);
// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c);
// C[m x n] += A[k x m]^T * B[k x n]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c);

}  // namespace convseq::detail
