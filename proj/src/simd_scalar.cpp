#include "kbl/simd.hpp"

#include <cmath>

namespace kbl::simd {

namespace {

double sc_dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

double sc_dot3(const double* a, const double* b, const double* c, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i] * c[i];
    return s;
}

double sc_sum(const double* a, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i];
    return s;
}

void sc_axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void sc_axpby(double alpha, const double* x, double beta, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = alpha * x[i] + beta * y[i];
}

double sc_sup_abs_w(const double* w, const double* f, std::size_t n) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double v = std::fabs(w[i] * f[i]);
        if (v > m) m = v;
    }
    return m;
}

double sc_nrm2sq_w(const double* w, const double* f, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += w[i] * f[i] * f[i];
    return s;
}

void sc_matvec(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y) {
    for (std::size_t r = 0; r < rows; ++r) {
        y[r] = sc_dot(a + r * cols, x, cols);
    }
}

}  // namespace

const Kernels& scalar_kernels() {
    static const Kernels k{sc_dot, sc_dot3, sc_sum, sc_axpy, sc_axpby,
                           sc_sup_abs_w, sc_nrm2sq_w, sc_matvec};
    return k;
}

}  // namespace kbl::simd
