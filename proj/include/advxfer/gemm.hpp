#pragma once

#include <cstddef>

// Small row-major GEMM kernels sized for the conv/linear shapes in this
// project (M,K up to ~1200, N up to ~4096). Every output element is
// accumulated in ascending-k order by exactly one thread, so results are
// bit-identical for any thread count.

namespace advxfer {

namespace detail {
inline constexpr int kGemmKBlock = 256;
}

// C[M x N] (+)= A[M x K] * B[K x N]
template <typename S>
void gemm_nn(int M, int N, int K, const S* A, const S* B, S* C, bool accumulate = false,
             bool parallel = false) {
  const int MB = 4;
  auto row_block = [&](int m0, int mcount) {
    S* c[MB];
    for (int i = 0; i < mcount; ++i) {
      c[i] = C + static_cast<size_t>(m0 + i) * N;
      if (!accumulate)
        for (int n = 0; n < N; ++n) c[i][n] = S(0);
    }
    for (int k0 = 0; k0 < K; k0 += detail::kGemmKBlock) {
      int k1 = k0 + detail::kGemmKBlock < K ? k0 + detail::kGemmKBlock : K;
      if (mcount == MB) {
        for (int k = k0; k < k1; ++k) {
          S a0 = A[static_cast<size_t>(m0 + 0) * K + k];
          S a1 = A[static_cast<size_t>(m0 + 1) * K + k];
          S a2 = A[static_cast<size_t>(m0 + 2) * K + k];
          S a3 = A[static_cast<size_t>(m0 + 3) * K + k];
          const S* b = B + static_cast<size_t>(k) * N;
          for (int n = 0; n < N; ++n) {
            S bn = b[n];
            c[0][n] += a0 * bn;
            c[1][n] += a1 * bn;
            c[2][n] += a2 * bn;
            c[3][n] += a3 * bn;
          }
        }
      } else {
        for (int k = k0; k < k1; ++k) {
          const S* b = B + static_cast<size_t>(k) * N;
          for (int i = 0; i < mcount; ++i) {
            S a = A[static_cast<size_t>(m0 + i) * K + k];
            for (int n = 0; n < N; ++n) c[i][n] += a * b[n];
          }
        }
      }
    }
  };

  int full = M / MB;
#pragma omp parallel for schedule(static) if (parallel)
  for (int blk = 0; blk < full; ++blk) row_block(blk * MB, MB);
  if (M % MB) row_block(full * MB, M % MB);
}

// C[M x N] (+)= A^T * B where A is [K x M], B is [K x N]
template <typename S>
void gemm_tn(int M, int N, int K, const S* A, const S* B, S* C, bool accumulate = false,
             bool parallel = false) {
  const int MB = 4;
  auto row_block = [&](int m0, int mcount) {
    S* c[MB];
    for (int i = 0; i < mcount; ++i) {
      c[i] = C + static_cast<size_t>(m0 + i) * N;
      if (!accumulate)
        for (int n = 0; n < N; ++n) c[i][n] = S(0);
    }
    for (int k = 0; k < K; ++k) {
      const S* arow = A + static_cast<size_t>(k) * M + m0;
      const S* b = B + static_cast<size_t>(k) * N;
      if (mcount == MB) {
        S a0 = arow[0], a1 = arow[1], a2 = arow[2], a3 = arow[3];
        for (int n = 0; n < N; ++n) {
          S bn = b[n];
          c[0][n] += a0 * bn;
          c[1][n] += a1 * bn;
          c[2][n] += a2 * bn;
          c[3][n] += a3 * bn;
        }
      } else {
        for (int i = 0; i < mcount; ++i) {
          S a = arow[i];
          for (int n = 0; n < N; ++n) c[i][n] += a * b[n];
        }
      }
    }
  };

  int full = M / MB;
#pragma omp parallel for schedule(static) if (parallel)
  for (int blk = 0; blk < full; ++blk) row_block(blk * MB, MB);
  if (M % MB) row_block(full * MB, M % MB);
}

// C[M x N] (+)= A * B^T where A is [M x K], B is [N x K] (rows dotted)
template <typename S>
void gemm_nt(int M, int N, int K, const S* A, const S* B, S* C, bool accumulate = false,
             bool parallel = false) {
#pragma omp parallel for schedule(static) if (parallel)
  for (int m = 0; m < M; ++m) {
    const S* a = A + static_cast<size_t>(m) * K;
    S* c = C + static_cast<size_t>(m) * N;
    for (int n = 0; n < N; ++n) {
      const S* b = B + static_cast<size_t>(n) * K;
      S acc = S(0);
      for (int k = 0; k < K; ++k) acc += a[k] * b[k];
      c[n] = accumulate ? c[n] + acc : acc;
    }
  }
}

}  // namespace advxfer
