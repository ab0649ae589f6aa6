#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

// Arithmetic inner loops used by the forward model, the solver and the
// network. Every kernel has a scalar reference implementation and, on
// x86-64, an AVX2/FMA variant. The active variant is chosen at runtime
// from CPU capabilities (override with set_backend or the SOSUQ_BACKEND
// environment variable) and the variants are equivalence-tested against
// the scalar reference.

namespace sosuq::kernels {

enum class Backend { scalar, avx2 };

/// Best backend this CPU supports.
Backend best_supported();

/// Currently active backend (detected on first use).
Backend active_backend();

/// Force a backend; throws ConfigError if unsupported on this CPU.
void set_backend(Backend b);

std::string backend_name(Backend b);

// 2D convolution with zero padding, unit stride and an explicit anchor:
//   out[iz*nx+ix] (+)= sum_{kz,kx} ker[kz*o+kx] * img[(iz+kz-az)*nx + (ix+kx-ax)]
// with img treated as zero outside the nx x nz box. The adjoint of
// (ker, ax, az) is (flipped ker, o-1-ax, o-1-az).
void conv2d(const double* img, int nx, int nz, const double* ker, int o,
            int ax, int az, double* out, bool accumulate);

// Gradient of conv2d output w.r.t. the kernel:
//   kgrad[kz*o+kx] += sum_{ix,iz} outgrad[iz*nx+ix] * img[(iz+kz-az)*nx + (ix+kx-ax)]
void conv2d_kernel_grad(const double* img, int nx, int nz, const double* outgrad,
                        int o, int ax, int az, double* kgrad);

// y (+)= A x for a CSR matrix with `rows` rows.
void csr_matvec(int rows, const std::int64_t* rowptr, const std::int32_t* col,
                const double* val, const double* x, double* y, bool accumulate);

void mul_ew(const double* a, const double* b, double* out, std::size_t n); // out = a.*b
void axpy(double alpha, const double* x, double* y, std::size_t n);       // y += alpha*x
double dot(const double* a, const double* b, std::size_t n);
double sum(const double* a, std::size_t n);
double sum_abs(const double* a, std::size_t n);
double sum_sq(const double* a, std::size_t n);

// Scalar reference implementations, exposed for equivalence tests.
namespace scalar {
void conv2d(const double* img, int nx, int nz, const double* ker, int o,
            int ax, int az, double* out, bool accumulate);
void conv2d_kernel_grad(const double* img, int nx, int nz, const double* outgrad,
                        int o, int ax, int az, double* kgrad);
void csr_matvec(int rows, const std::int64_t* rowptr, const std::int32_t* col,
                const double* val, const double* x, double* y, bool accumulate);
void mul_ew(const double* a, const double* b, double* out, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
double sum(const double* a, std::size_t n);
double sum_abs(const double* a, std::size_t n);
double sum_sq(const double* a, std::size_t n);
} // namespace scalar

} // namespace sosuq::kernels
