#include "kbl/simd.hpp"

#ifdef __aarch64__

#include <arm_neon.h>

#include <cmath>

namespace kbl::simd {

namespace {

double v_dot(const double* a, const double* b, std::size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) acc = vfmaq_f64(acc, vld1q_f64(a + i), vld1q_f64(b + i));
    double s = vgetq_lane_f64(acc, 0) + vgetq_lane_f64(acc, 1);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

double v_dot3(const double* a, const double* b, const double* c, std::size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t ab = vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i));
        acc = vfmaq_f64(acc, ab, vld1q_f64(c + i));
    }
    double s = vgetq_lane_f64(acc, 0) + vgetq_lane_f64(acc, 1);
    for (; i < n; ++i) s += a[i] * b[i] * c[i];
    return s;
}

double v_sum(const double* a, std::size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vld1q_f64(a + i));
    double s = vgetq_lane_f64(acc, 0) + vgetq_lane_f64(acc, 1);
    for (; i < n; ++i) s += a[i];
    return s;
}

void v_axpy(double alpha, const double* x, double* y, std::size_t n) {
    float64x2_t va = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void v_axpby(double alpha, const double* x, double beta, double* y, std::size_t n) {
    float64x2_t va = vdupq_n_f64(alpha);
    float64x2_t vb = vdupq_n_f64(beta);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t vy = vmulq_f64(vb, vld1q_f64(y + i));
        vst1q_f64(y + i, vfmaq_f64(vy, va, vld1q_f64(x + i)));
    }
    for (; i < n; ++i) y[i] = alpha * x[i] + beta * y[i];
}

double v_sup_abs_w(const double* w, const double* f, std::size_t n) {
    float64x2_t m = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t v = vabsq_f64(vmulq_f64(vld1q_f64(w + i), vld1q_f64(f + i)));
        m = vmaxq_f64(m, v);
    }
    double r = vgetq_lane_f64(m, 0);
    double r1 = vgetq_lane_f64(m, 1);
    if (r1 > r) r = r1;
    for (; i < n; ++i) {
        double v = std::fabs(w[i] * f[i]);
        if (v > r) r = v;
    }
    return r;
}

double v_nrm2sq_w(const double* w, const double* f, std::size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t vf = vld1q_f64(f + i);
        float64x2_t wf = vmulq_f64(vld1q_f64(w + i), vf);
        acc = vfmaq_f64(acc, wf, vf);
    }
    double s = vgetq_lane_f64(acc, 0) + vgetq_lane_f64(acc, 1);
    for (; i < n; ++i) s += w[i] * f[i] * f[i];
    return s;
}

void v_matvec(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y) {
    for (std::size_t r = 0; r < rows; ++r) y[r] = v_dot(a + r * cols, x, cols);
}

}  // namespace

const Kernels& neon_kernels() {
    static const Kernels k{v_dot, v_dot3, v_sum, v_axpy, v_axpby,
                           v_sup_abs_w, v_nrm2sq_w, v_matvec};
    return k;
}

}  // namespace kbl::simd

#endif  // __aarch64__
