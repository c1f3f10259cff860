#pragma once

#include <cstddef>
#include <string>

// Vectorized kernels for the dense inner loops (quadrature reductions,
// kernel matrix products, field updates).  Every kernel has a scalar
// reference implementation; AVX2/NEON variants are selected once at
// runtime and must agree with the reference up to reassociation of the
// partial sums.  Each implementation uses a fixed summation order, so
// results are reproducible for a fixed backend.

namespace kbl::simd {

enum class Backend { Scalar, Avx2, Neon };

struct Kernels {
    // sum_i a[i]*b[i]
    double (*dot)(const double* a, const double* b, std::size_t n);
    // sum_i a[i]*b[i]*c[i]
    double (*dot3)(const double* a, const double* b, const double* c, std::size_t n);
    // sum_i a[i]
    double (*sum)(const double* a, std::size_t n);
    // y[i] += alpha*x[i]
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // y[i] = alpha*x[i] + beta*y[i]
    void (*axpby)(double alpha, const double* x, double beta, double* y, std::size_t n);
    // max_i |w[i]*f[i]|
    double (*sup_abs_w)(const double* w, const double* f, std::size_t n);
    // sum_i w[i]*f[i]*f[i]
    double (*nrm2sq_w)(const double* w, const double* f, std::size_t n);
    // y = A*x, A row-major (rows x cols)
    void (*matvec)(const double* a, std::size_t rows, std::size_t cols,
                   const double* x, double* y);
};

const Kernels& scalar_kernels();
#ifdef __x86_64__
bool avx2_supported();
const Kernels& avx2_kernels();
#endif
#ifdef __aarch64__
const Kernels& neon_kernels();
#endif

// Active backend.  "auto" picks the widest supported instruction set.
void select_backend(const std::string& name);  // "auto" | "scalar" | "avx2" | "neon"
Backend active_backend();
const char* backend_name();

const Kernels& active();

inline double dot(const double* a, const double* b, std::size_t n) { return active().dot(a, b, n); }
inline double dot3(const double* a, const double* b, const double* c, std::size_t n) {
    return active().dot3(a, b, c, n);
}
inline double sum(const double* a, std::size_t n) { return active().sum(a, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
    active().axpy(alpha, x, y, n);
}
inline void axpby(double alpha, const double* x, double beta, double* y, std::size_t n) {
    active().axpby(alpha, x, beta, y, n);
}
inline double sup_abs_w(const double* w, const double* f, std::size_t n) {
    return active().sup_abs_w(w, f, n);
}
inline double nrm2sq_w(const double* w, const double* f, std::size_t n) {
    return active().nrm2sq_w(w, f, n);
}
inline void matvec(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y) {
    active().matvec(a, rows, cols, x, y);
}

}  // namespace kbl::simd
