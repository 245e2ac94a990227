#pragma once

#include <algorithm>
#include <cstddef>

namespace amr {

// Row-major kernels, single-threaded, fixed accumulation order. The lane-split
// and tile structure below is chosen so GCC vectorizes without -ffast-math;
// results are bit-reproducible for a given build.

// C (M x N) = or += A (M x K) * B (K x N)
template <class T>
void gemm_nn(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
    constexpr int MR = 4;
    constexpr int NB = 64;
    if (!accumulate) std::fill(C, C + static_cast<std::size_t>(M) * N, T(0));
    for (int m0 = 0; m0 < M; m0 += MR) {
        const int mr = std::min(MR, M - m0);
        for (int n0 = 0; n0 < N; n0 += NB) {
            const int nb = std::min(NB, N - n0);
            if (mr == MR && nb == NB) {
                T acc0[NB] = {}, acc1[NB] = {}, acc2[NB] = {}, acc3[NB] = {};
                const T* a0 = A + static_cast<std::size_t>(m0 + 0) * K;
                const T* a1 = A + static_cast<std::size_t>(m0 + 1) * K;
                const T* a2 = A + static_cast<std::size_t>(m0 + 2) * K;
                const T* a3 = A + static_cast<std::size_t>(m0 + 3) * K;
                for (int k = 0; k < K; ++k) {
                    const T* __restrict__ b = B + static_cast<std::size_t>(k) * N + n0;
                    const T w0 = a0[k], w1 = a1[k], w2 = a2[k], w3 = a3[k];
                    for (int j = 0; j < NB; ++j) {
                        const T bj = b[j];
                        acc0[j] += w0 * bj;
                        acc1[j] += w1 * bj;
                        acc2[j] += w2 * bj;
                        acc3[j] += w3 * bj;
                    }
                }
                T* c0 = C + static_cast<std::size_t>(m0 + 0) * N + n0;
                T* c1 = C + static_cast<std::size_t>(m0 + 1) * N + n0;
                T* c2 = C + static_cast<std::size_t>(m0 + 2) * N + n0;
                T* c3 = C + static_cast<std::size_t>(m0 + 3) * N + n0;
                for (int j = 0; j < NB; ++j) {
                    c0[j] += acc0[j];
                    c1[j] += acc1[j];
                    c2[j] += acc2[j];
                    c3[j] += acc3[j];
                }
            } else {
                for (int mi = 0; mi < mr; ++mi) {
                    T* c = C + static_cast<std::size_t>(m0 + mi) * N + n0;
                    const T* a = A + static_cast<std::size_t>(m0 + mi) * K;
                    for (int k = 0; k < K; ++k) {
                        const T w = a[k];
                        const T* b = B + static_cast<std::size_t>(k) * N + n0;
                        for (int j = 0; j < nb; ++j) c[j] += w * b[j];
                    }
                }
            }
        }
    }
}

// Lane-split dot product: deterministic, vectorizable without reassociation.
template <class T>
T dot_lanes(const T* a, const T* b, int n) {
    constexpr int VL = 16;
    T lanes[VL] = {};
    int k = 0;
    for (; k + VL <= n; k += VL)
        for (int l = 0; l < VL; ++l) lanes[l] += a[k + l] * b[k + l];
    T tail = T(0);
    for (; k < n; ++k) tail += a[k] * b[k];
    T s = T(0);
    for (int l = 0; l < VL; ++l) s += lanes[l];
    return s + tail;
}

// C (M x N) = or += A (M x K) * B^T, with B stored row-major (N x K).
template <class T>
void gemm_nt(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
    for (int m = 0; m < M; ++m) {
        const T* a = A + static_cast<std::size_t>(m) * K;
        T* c = C + static_cast<std::size_t>(m) * N;
        for (int n = 0; n < N; ++n) {
            const T d = dot_lanes(a, B + static_cast<std::size_t>(n) * K, K);
            c[n] = accumulate ? c[n] + d : d;
        }
    }
}

// C (M x N) = or += A^T * B, with A stored row-major (K x M), B (K x N).
// axpy form: streams rows of A and B once per k.
template <class T>
void gemm_tn(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
    if (!accumulate) std::fill(C, C + static_cast<std::size_t>(M) * N, T(0));
    for (int k = 0; k < K; ++k) {
        const T* a = A + static_cast<std::size_t>(k) * M;
        const T* b = B + static_cast<std::size_t>(k) * N;
        for (int m = 0; m < M; ++m) {
            const T w = a[m];
            T* c = C + static_cast<std::size_t>(m) * N;
            for (int j = 0; j < N; ++j) c[j] += w * b[j];
        }
    }
}

}  // namespace amr
