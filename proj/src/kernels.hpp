#pragma once

#include <cstddef>

// Row-major GEMM kernels shared by the eager ops and the tape. Loop orders keep
// the innermost access contiguous; summation order is fixed so results are
// reproducible run to run.
namespace unimot::kernels {

// out[m,n] (+)= a[m,k] * b[k,n]
inline void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* out,
                    bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        double* o = out + i * n;
        if (!accumulate) {
            for (std::size_t j = 0; j < n; ++j) o[j] = 0.0;
        }
        const double* ar = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ar[p];
            if (av == 0.0) continue;
            const double* br = b + p * n;
            for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
        }
    }
}

// out[m,n] (+)= a[m,k] * b[n,k]^T
inline void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* out,
                    bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ar = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* br = b + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
            out[i * n + j] = accumulate ? out[i * n + j] + s : s;
        }
    }
}

// out[k,n] (+)= a[m,k]^T * b[m,n]
inline void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* out,
                    bool accumulate) {
    if (!accumulate) {
        for (std::size_t i = 0; i < k * n; ++i) out[i] = 0.0;
    }
    for (std::size_t i = 0; i < m; ++i) {
        const double* ar = a + i * k;
        const double* br = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ar[p];
            if (av == 0.0) continue;
            double* o = out + p * n;
            for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
        }
    }
}

}  // namespace unimot::kernels
