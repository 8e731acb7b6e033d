#pragma once

#include <cstddef>
#include <cstring>

namespace densiclip::ad::detail {

// Row-major kernels. Accumulation order over k is fixed ascending for every
// output cell, so results are bit-identical across tilings and thread
// counts. Tiles keep the streamed operand resident in cache.

inline constexpr int kColTile = 1024;

// C[M,N] = A[M,K] @ B[K,N]
inline void mm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
    std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
    for (int j0 = 0; j0 < n; j0 += kColTile) {
        const int j1 = j0 + kColTile < n ? j0 + kColTile : n;
        for (int i = 0; i < m; ++i) {
            double* crow = c + static_cast<size_t>(i) * n;
            const double* arow = a + static_cast<size_t>(i) * k;
            for (int p = 0; p < k; ++p) {
                const double av = arow[p];
                const double* brow = b + static_cast<size_t>(p) * n;
                for (int j = j0; j < j1; ++j) crow[j] += av * brow[j];
            }
        }
    }
}

// C[M,K] = A[M,N] @ B[K,N]^T  (rows of A dotted with rows of B)
inline void mm_nt(const double* a, const double* b, double* c, int m, int n, int k) {
    constexpr int jb = 16; // B rows kept warm across the i sweep
    for (int j0 = 0; j0 < k; j0 += jb) {
        const int j1 = j0 + jb < k ? j0 + jb : k;
        for (int i = 0; i < m; ++i) {
            const double* arow = a + static_cast<size_t>(i) * n;
            double* crow = c + static_cast<size_t>(i) * k;
            for (int j = j0; j < j1; ++j) {
                const double* brow = b + static_cast<size_t>(j) * n;
                double s = 0.0;
                for (int p = 0; p < n; ++p) s += arow[p] * brow[p];
                crow[j] = s;
            }
        }
    }
}

// C[Q,R] = A[P,Q]^T @ B[P,R]
inline void mm_tn(const double* a, const double* b, double* c, int p, int q, int r) {
    std::memset(c, 0, sizeof(double) * static_cast<size_t>(q) * r);
    for (int j0 = 0; j0 < r; j0 += kColTile) {
        const int j1 = j0 + kColTile < r ? j0 + kColTile : r;
        for (int ip = 0; ip < p; ++ip) {
            const double* arow = a + static_cast<size_t>(ip) * q;
            const double* brow = b + static_cast<size_t>(ip) * r;
            for (int iq = 0; iq < q; ++iq) {
                const double av = arow[iq];
                double* crow = c + static_cast<size_t>(iq) * r;
                for (int j = j0; j < j1; ++j) crow[j] += av * brow[j];
            }
        }
    }
}

} // namespace densiclip::ad::detail
