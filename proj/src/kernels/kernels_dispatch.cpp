#include <cstdlib>
#include <mutex>

#include "sosuq/errors.hpp"
#include "sosuq/kernels.hpp"

namespace sosuq::kernels {

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
void conv2d(const double*, int, int, const double*, int, int, int, double*, bool);
void conv2d_kernel_grad(const double*, int, int, const double*, int, int, int, double*);
void csr_matvec(int, const std::int64_t*, const std::int32_t*, const double*, const double*, double*, bool);
void mul_ew(const double*, const double*, double*, std::size_t);
void axpy(double, const double*, double*, std::size_t);
double dot(const double*, const double*, std::size_t);
double sum(const double*, std::size_t);
double sum_abs(const double*, std::size_t);
double sum_sq(const double*, std::size_t);
} // namespace avx2
#endif

namespace {

struct Table {
    decltype(&scalar::conv2d) conv2d = &scalar::conv2d;
    decltype(&scalar::conv2d_kernel_grad) conv2d_kernel_grad = &scalar::conv2d_kernel_grad;
    decltype(&scalar::csr_matvec) csr_matvec = &scalar::csr_matvec;
    decltype(&scalar::mul_ew) mul_ew = &scalar::mul_ew;
    decltype(&scalar::axpy) axpy = &scalar::axpy;
    decltype(&scalar::dot) dot = &scalar::dot;
    decltype(&scalar::sum) sum = &scalar::sum;
    decltype(&scalar::sum_abs) sum_abs = &scalar::sum_abs;
    decltype(&scalar::sum_sq) sum_sq = &scalar::sum_sq;
};

Table g_table;
Backend g_backend = Backend::scalar;
std::once_flag g_init;

void apply_backend(Backend b) {
    Table t;
#if defined(__x86_64__) || defined(_M_X64)
    if (b == Backend::avx2) {
        t.conv2d = &avx2::conv2d;
        t.conv2d_kernel_grad = &avx2::conv2d_kernel_grad;
        t.csr_matvec = &avx2::csr_matvec;
        t.mul_ew = &avx2::mul_ew;
        t.axpy = &avx2::axpy;
        t.dot = &avx2::dot;
        t.sum = &avx2::sum;
        t.sum_abs = &avx2::sum_abs;
        t.sum_sq = &avx2::sum_sq;
    }
#endif
    g_table = t;
    g_backend = b;
}

void init_once() {
    std::call_once(g_init, [] {
        Backend b = best_supported();
        if (const char* env = std::getenv("SOSUQ_BACKEND")) {
            std::string s(env);
            if (s == "scalar") b = Backend::scalar;
            else if (s == "avx2" && best_supported() == Backend::avx2) b = Backend::avx2;
        }
        apply_backend(b);
    });
}

} // namespace

Backend best_supported() {
#if defined(__x86_64__) || defined(_M_X64)
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Backend::avx2;
#endif
    return Backend::scalar;
}

Backend active_backend() {
    init_once();
    return g_backend;
}

void set_backend(Backend b) {
    init_once();
    if (b == Backend::avx2 && best_supported() != Backend::avx2)
        throw ConfigError("avx2 kernels not supported on this CPU");
    apply_backend(b);
}

std::string backend_name(Backend b) {
    switch (b) {
        case Backend::avx2: return "avx2";
        default: return "scalar";
    }
}

void conv2d(const double* img, int nx, int nz, const double* ker, int o,
            int ax, int az, double* out, bool accumulate) {
    init_once();
    g_table.conv2d(img, nx, nz, ker, o, ax, az, out, accumulate);
}

void conv2d_kernel_grad(const double* img, int nx, int nz, const double* outgrad,
                        int o, int ax, int az, double* kgrad) {
    init_once();
    g_table.conv2d_kernel_grad(img, nx, nz, outgrad, o, ax, az, kgrad);
}

void csr_matvec(int rows, const std::int64_t* rowptr, const std::int32_t* col,
                const double* val, const double* x, double* y, bool accumulate) {
    init_once();
    g_table.csr_matvec(rows, rowptr, col, val, x, y, accumulate);
}

void mul_ew(const double* a, const double* b, double* out, std::size_t n) {
    init_once();
    g_table.mul_ew(a, b, out, n);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    init_once();
    g_table.axpy(alpha, x, y, n);
}

double dot(const double* a, const double* b, std::size_t n) {
    init_once();
    return g_table.dot(a, b, n);
}

double sum(const double* a, std::size_t n) {
    init_once();
    return g_table.sum(a, n);
}

double sum_abs(const double* a, std::size_t n) {
    init_once();
    return g_table.sum_abs(a, n);
}

double sum_sq(const double* a, std::size_t n) {
    init_once();
    return g_table.sum_sq(a, n);
}

} // namespace sosuq::kernels
