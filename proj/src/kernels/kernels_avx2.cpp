// AVX2/FMA kernel variants. This translation unit is compiled with
// -mavx2 -mfma on x86-64 and selected at runtime only when the CPU
// reports both features.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>
#include <cstring>

#include "sosuq/kernels.hpp"

namespace sosuq::kernels::avx2 {

static inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

void conv2d(const double* img, int nx, int nz, const double* ker, int o,
            int ax, int az, double* out, bool accumulate) {
    const int xin0 = ax;                 // first x with all horizontal taps in range
    const int xin1 = nx - (o - 1 - ax);  // one past last such x
    for (int iz = 0; iz < nz; ++iz) {
        double* dst = out + static_cast<size_t>(iz) * nx;
        // interior: per-pixel accumulation, 4 outputs per step
        int ix = xin0;
        for (; ix + 4 <= xin1; ix += 4) {
            __m256d acc = accumulate ? _mm256_loadu_pd(dst + ix) : _mm256_setzero_pd();
            for (int kz = 0; kz < o; ++kz) {
                const int sz = iz + kz - az;
                if (sz < 0 || sz >= nz) continue;
                const double* srow = img + static_cast<size_t>(sz) * nx + (ix - ax);
                const double* krow = ker + kz * o;
                for (int kx = 0; kx < o; ++kx)
                    acc = _mm256_fmadd_pd(_mm256_set1_pd(krow[kx]), _mm256_loadu_pd(srow + kx), acc);
            }
            _mm256_storeu_pd(dst + ix, acc);
        }
        // edges and interior remainder: scalar per-pixel
        auto scalar_pixel = [&](int px) {
            double acc = accumulate ? dst[px] : 0.0;
            for (int kz = 0; kz < o; ++kz) {
                const int sz = iz + kz - az;
                if (sz < 0 || sz >= nz) continue;
                const double* srow = img + static_cast<size_t>(sz) * nx;
                for (int kx = 0; kx < o; ++kx) {
                    const int sx = px + kx - ax;
                    if (sx < 0 || sx >= nx) continue;
                    acc += ker[kz * o + kx] * srow[sx];
                }
            }
            dst[px] = acc;
        };
        for (int px = 0; px < xin0 && px < nx; ++px) scalar_pixel(px);
        for (int px = ix; px < nx; ++px)
            if (px >= xin0 && px < xin1) scalar_pixel(px);
        for (int px = (xin1 > xin0 ? xin1 : xin0); px < nx; ++px) scalar_pixel(px);
    }
}

void conv2d_kernel_grad(const double* img, int nx, int nz, const double* outgrad,
                        int o, int ax, int az, double* kgrad) {
    for (int kz = 0; kz < o; ++kz) {
        for (int kx = 0; kx < o; ++kx) {
            const int shift = kx - ax;
            const int x0 = shift < 0 ? -shift : 0;
            const int x1 = shift > 0 ? nx - shift : nx;
            __m256d acc4 = _mm256_setzero_pd();
            double acc = 0.0;
            for (int iz = 0; iz < nz; ++iz) {
                const int sz = iz + kz - az;
                if (sz < 0 || sz >= nz) continue;
                const double* srow = img + static_cast<size_t>(sz) * nx + shift;
                const double* grow = outgrad + static_cast<size_t>(iz) * nx;
                int ix = x0;
                for (; ix + 4 <= x1; ix += 4)
                    acc4 = _mm256_fmadd_pd(_mm256_loadu_pd(grow + ix), _mm256_loadu_pd(srow + ix), acc4);
                for (; ix < x1; ++ix) acc += grow[ix] * srow[ix];
            }
            kgrad[kz * o + kx] += hsum(acc4) + acc;
        }
    }
}

void csr_matvec(int rows, const std::int64_t* rowptr, const std::int32_t* col,
                const double* val, const double* x, double* y, bool accumulate) {
    for (int r = 0; r < rows; ++r) {
        const std::int64_t k0 = rowptr[r], k1 = rowptr[r + 1];
        __m256d acc4 = _mm256_setzero_pd();
        std::int64_t k = k0;
        for (; k + 4 <= k1; k += 4) {
            __m128i idx = _mm_loadu_si128(reinterpret_cast<const __m128i*>(col + k));
            __m256d xv = _mm256_i32gather_pd(x, idx, 8);
            acc4 = _mm256_fmadd_pd(_mm256_loadu_pd(val + k), xv, acc4);
        }
        double acc = hsum(acc4);
        for (; k < k1; ++k) acc += val[k] * x[col[k]];
        y[r] = accumulate ? y[r] + acc : acc;
    }
}

void mul_ew(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

double dot(const double* a, const double* b, std::size_t n) {
    __m256d acc4 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        acc4 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc4);
    double acc = hsum(acc4);
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double sum(const double* a, std::size_t n) {
    __m256d acc4 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc4 = _mm256_add_pd(acc4, _mm256_loadu_pd(a + i));
    double acc = hsum(acc4);
    for (; i < n; ++i) acc += a[i];
    return acc;
}

double sum_abs(const double* a, std::size_t n) {
    const __m256d mask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7fffffffffffffffLL));
    __m256d acc4 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        acc4 = _mm256_add_pd(acc4, _mm256_and_pd(mask, _mm256_loadu_pd(a + i)));
    double acc = hsum(acc4);
    for (; i < n; ++i) acc += std::fabs(a[i]);
    return acc;
}

double sum_sq(const double* a, std::size_t n) {
    __m256d acc4 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d v = _mm256_loadu_pd(a + i);
        acc4 = _mm256_fmadd_pd(v, v, acc4);
    }
    double acc = hsum(acc4);
    for (; i < n; ++i) acc += a[i] * a[i];
    return acc;
}

} // namespace sosuq::kernels::avx2

#endif // x86-64
