#include <cmath>
#include <cstring>

#include "sosuq/kernels.hpp"

namespace sosuq::kernels::scalar {

void conv2d(const double* img, int nx, int nz, const double* ker, int o,
            int ax, int az, double* out, bool accumulate) {
    if (!accumulate) std::memset(out, 0, sizeof(double) * static_cast<size_t>(nx) * nz);
    for (int iz = 0; iz < nz; ++iz) {
        for (int kz = 0; kz < o; ++kz) {
            const int sz = iz + kz - az;
            if (sz < 0 || sz >= nz) continue;
            const double* src_row = img + static_cast<size_t>(sz) * nx;
            double* dst_row = out + static_cast<size_t>(iz) * nx;
            for (int kx = 0; kx < o; ++kx) {
                const double k = ker[kz * o + kx];
                if (k == 0.0) continue;
                const int shift = kx - ax;
                const int x0 = shift < 0 ? -shift : 0;
                const int x1 = shift > 0 ? nx - shift : nx;
                for (int ix = x0; ix < x1; ++ix) dst_row[ix] += k * src_row[ix + shift];
            }
        }
    }
}

void conv2d_kernel_grad(const double* img, int nx, int nz, const double* outgrad,
                        int o, int ax, int az, double* kgrad) {
    for (int kz = 0; kz < o; ++kz) {
        for (int kx = 0; kx < o; ++kx) {
            const int shift = kx - ax;
            const int x0 = shift < 0 ? -shift : 0;
            const int x1 = shift > 0 ? nx - shift : nx;
            double acc = 0.0;
            for (int iz = 0; iz < nz; ++iz) {
                const int sz = iz + kz - az;
                if (sz < 0 || sz >= nz) continue;
                const double* src_row = img + static_cast<size_t>(sz) * nx;
                const double* g_row = outgrad + static_cast<size_t>(iz) * nx;
                for (int ix = x0; ix < x1; ++ix) acc += g_row[ix] * src_row[ix + shift];
            }
            kgrad[kz * o + kx] += acc;
        }
    }
}

void csr_matvec(int rows, const std::int64_t* rowptr, const std::int32_t* col,
                const double* val, const double* x, double* y, bool accumulate) {
    for (int r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::int64_t k = rowptr[r]; k < rowptr[r + 1]; ++k) acc += val[k] * x[col[k]];
        y[r] = accumulate ? y[r] + acc : acc;
    }
}

void mul_ew(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double dot(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double sum(const double* a, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i];
    return acc;
}

double sum_abs(const double* a, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += std::fabs(a[i]);
    return acc;
}

double sum_sq(const double* a, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * a[i];
    return acc;
}

} // namespace sosuq::kernels::scalar
