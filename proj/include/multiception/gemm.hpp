// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>

// Row-major single-threaded matrix products used by the lowered convolution.
// All routines accumulate into C.
namespace multiception::gemm {

/// C[M x N] += A[M x K] * B[K x N]
template <typename T>
void nn(std::size_t M, std::size_t N, std::size_t K, const T *A, std::size_t lda, const T *B,
        std::size_t ldb, T *C, std::size_t ldc) {
  constexpr std::size_t kColBlock = 256;
  for (std::size_t j0 = 0; j0 < N; j0 += kColBlock) {
    const std::size_t jn = std::min(kColBlock, N - j0);
    std::size_t i = 0;
    for (; i + 4 <= M; i += 4) {
      T *c0 = C + (i + 0) * ldc + j0;
      T *c1 = C + (i + 1) * ldc + j0;
      T *c2 = C + (i + 2) * ldc + j0;
      T *c3 = C + (i + 3) * ldc + j0;
      for (std::size_t p = 0; p < K; ++p) {
        const T a0 = A[(i + 0) * lda + p];
        const T a1 = A[(i + 1) * lda + p];
        const T a2 = A[(i + 2) * lda + p];
        const T a3 = A[(i + 3) * lda + p];
        const T *b = B + p * ldb + j0;
        for (std::size_t j = 0; j < jn; ++j) {
          const T bj = b[j];
          c0[j] += a0 * bj;
          c1[j] += a1 * bj;
          c2[j] += a2 * bj;
          c3[j] += a3 * bj;
        }
      }
    }
    for (; i < M; ++i) {
      T *c = C + i * ldc + j0;
      for (std::size_t p = 0; p < K; ++p) {
        const T a = A[i * lda + p];
        const T *b = B + p * ldb + j0;
        for (std::size_t j = 0; j < jn; ++j) c[j] += a * b[j];
      }
    }
  }
}

/// C[M x N] += A[M x K] * B[N x K]^T
template <typename T>
void nt(std::size_t M, std::size_t N, std::size_t K, const T *A, std::size_t lda, const T *B,
        std::size_t ldb, T *C, std::size_t ldc) {
  for (std::size_t i = 0; i < M; ++i) {
    const T *a = A + i * lda;
    for (std::size_t j = 0; j < N; ++j) {
      const T *b = B + j * ldb;
      T acc = T(0);
      for (std::size_t p = 0; p < K; ++p) acc += a[p] * b[p];
      C[i * ldc + j] += acc;
    }
  }
}

/// C[M x N] += A[K x M]^T * B[K x N]
template <typename T>
void tn(std::size_t M, std::size_t N, std::size_t K, const T *A, std::size_t lda, const T *B,
        std::size_t ldb, T *C, std::size_t ldc) {
  for (std::size_t p = 0; p < K; ++p) {
    const T *b = B + p * ldb;
    for (std::size_t i = 0; i < M; ++i) {
      const T a = A[p * lda + i];
      if (a == T(0)) continue;
      T *c = C + i * ldc;
      for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

} // namespace multiception::gemm
