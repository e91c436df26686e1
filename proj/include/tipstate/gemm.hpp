// Register-blocked matrix multiply used by the convolution and dense layers.
//
// C[M x N] += A[M x K] * B[K x N], all row-major with explicit leading
// dimensions. The accumulation order over k is fixed, so results are
// bit-reproducible run to run; vectorization happens across the N tile where
// every lane owns its own accumulator.
#pragma once

#include <algorithm>
#include <cstddef>

namespace tipstate {

namespace detail {

template <typename T, int MR, int NR>
void gemm_tile(int M, int N, int K, const T* a, int lda, const T* b, int ldb, T* c, int ldc) {
    int m = 0;
    for (; m + MR <= M; m += MR) {
        int n = 0;
        for (; n + NR <= N; n += NR) {
            T acc[MR][NR] = {};
            for (int k = 0; k < K; ++k) {
                const T* bp = b + static_cast<std::size_t>(k) * ldb + n;
                for (int i = 0; i < MR; ++i) {
                    const T av = a[static_cast<std::size_t>(m + i) * lda + k];
#pragma omp simd
                    for (int j = 0; j < NR; ++j) acc[i][j] += av * bp[j];
                }
            }
            for (int i = 0; i < MR; ++i) {
                T* cp = c + static_cast<std::size_t>(m + i) * ldc + n;
                for (int j = 0; j < NR; ++j) cp[j] += acc[i][j];
            }
        }
        for (; n < N; ++n) {
            for (int i = 0; i < MR; ++i) {
                T s = 0;
                const T* ap = a + static_cast<std::size_t>(m + i) * lda;
                for (int k = 0; k < K; ++k) s += ap[k] * b[static_cast<std::size_t>(k) * ldb + n];
                c[static_cast<std::size_t>(m + i) * ldc + n] += s;
            }
        }
    }
    for (; m < M; ++m) {
        const T* ap = a + static_cast<std::size_t>(m) * lda;
        for (int n = 0; n < N; ++n) {
            T s = 0;
            for (int k = 0; k < K; ++k) s += ap[k] * b[static_cast<std::size_t>(k) * ldb + n];
            c[static_cast<std::size_t>(m) * ldc + n] += s;
        }
    }
}

}  // namespace detail

// Row blocks of C are distributed across threads. Every C element is still
// accumulated by exactly one thread in fixed k order, so the result is
// identical for any thread count; tiny products skip the dispatch overhead.
template <typename T>
void gemm_accumulate(int M, int N, int K, const T* a, int lda, const T* b, int ldb, T* c,
                     int ldc) {
    constexpr int MC = 64;
    if (static_cast<long long>(M) * N * K >= (1LL << 21) && M > MC) {
#pragma omp parallel for schedule(static)
        for (int m0 = 0; m0 < M; m0 += MC)
            detail::gemm_tile<T, 4, 32>(std::min(MC, M - m0), N, K,
                                        a + static_cast<std::size_t>(m0) * lda, lda, b, ldb,
                                        c + static_cast<std::size_t>(m0) * ldc, ldc);
    } else {
        detail::gemm_tile<T, 4, 32>(M, N, K, a, lda, b, ldb, c, ldc);
    }
}

// out[j*ldo + i] = in[i*ldi + j] for an M x N input.
template <typename T>
void transpose(int M, int N, const T* in, int ldi, T* out, int ldo) {
    constexpr int B = 32;
    for (int i0 = 0; i0 < M; i0 += B)
        for (int j0 = 0; j0 < N; j0 += B) {
            const int i1 = i0 + B < M ? i0 + B : M;
            const int j1 = j0 + B < N ? j0 + B : N;
            for (int i = i0; i < i1; ++i)
                for (int j = j0; j < j1; ++j)
                    out[static_cast<std::size_t>(j) * ldo + i] =
                        in[static_cast<std::size_t>(i) * ldi + j];
        }
}

}  // namespace tipstate
