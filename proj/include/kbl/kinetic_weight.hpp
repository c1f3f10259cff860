#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "kbl/collision.hpp"
#include "kbl/grids.hpp"

namespace kbl {

// C^1 cutoff: identity on [0, 1/2], one on [2, inf), cubic blend between
// with slopes (1, 0) at the ends; 0 <= chi' <= 1 and s chi'(s) <= 4 chi(s).
double chi_cutoff(double s);
double chi_cutoff_prime(double s);

// Kinetic weight sqrt(|xi1+u|^2 + (c nu0 x)^2) and its cutoff version.
// c is pinned to 1/8 so the growth along characteristics stays below the
// collision damping; nu0 must be the computed frequency lower bound.
struct KineticWeight {
    double c = 0.125;
    double nu0 = 0.0;
    double u = 0.0;

    KineticWeight(double nu0_, double u_) : nu0(nu0_), u(u_) {
        if (nu0 <= 0.0) throw std::invalid_argument("kinetic weight: nu0 must be computed and positive");
    }
    double alpha_tilde(double x, double xi1) const;
    double alpha(double x, double xi1) const;
};

// Two-sided exponential control of the weight along characteristics,
// checked on randomized admissible samples.  These are exact statements
// about the analytic weight: any violation beyond round-off slack is a bug.
struct VelocityLemmaReport {
    long samples = 0;
    long violations = 0;
    double worst_margin_tilde = 1e300;  // min over samples of (slack - deficiency)
    double worst_margin_alpha = 1e300;
    struct Row {
        double x, xi1, s;
        double lhs_t, mid_t, rhs_t;
        double lhs_a, mid_a, rhs_a;
        bool ok;
    };
    std::vector<Row> rows;  // retained only when keep_rows is set
};

VelocityLemmaReport verify_velocity_lemma(const KineticWeight& w, long samples, std::uint64_t seed,
                                          double slack = 1e-12, bool keep_rows = false);

// Duhamel-type singular integrals: time integral of the damped kernel sum
// against 1/alpha along a characteristic.
class NlnEvaluator {
public:
    NlnEvaluator(const VelocityGrid& grid, const KineticWeight& w, double gauss_rate,
                 double theta_for_two = 0.125);

    struct Result {
        double value = 0.0;
        double ratio = 0.0;  // value normalized by the regime's expected scale
    };

    // int_{t-T}^t ds e^{-nu(xi)(t-s)/2} int dxi' e^{-C|xi-xi'|^2}/|xi-xi'| / alpha(...)
    // normalization: t/alpha(x,xi) for T>1, (sqrt(T)+T ln t)/alpha for T<=1.
    Result outer(const std::array<double, 3>& xi, double x, double t, double T) const;

    // int_0^t ds e^{-nu(xi)(t-s)} int dxi' e^{-C|xi'|^2} / alpha(...)  ~ t/alpha
    Result inner(const std::array<double, 3>& xi, double x, double t) const;

    // double-kernel variant with the 1/w(xi') weight outside  ~ t/alpha
    Result two_kernel(const std::array<double, 3>& xi, double x, double t) const;

    // same time integral with the kernel sum and alpha == 1: bounded by
    // min(1, T) times a constant
    double unit_alpha_value(const std::array<double, 3>& xi, double t, double T) const;

    const KineticWeight& weight() const { return w_; }

private:
    const VelocityGrid* grid_;
    KineticWeight w_;
    double C_;
    std::vector<double> inner_weights_;     // q_j e^{-C|xi_j|^2}
    std::vector<double> two_kernel_coef_;   // precomputed j-sum of the double kernel

    std::vector<double> kernel_weights(const std::array<double, 3>& xi) const;
    double time_integral(double nu_rate, double b, double x, double lo, double hi,
                         const std::vector<double>& wts) const;
};

// 2-D quadrature of the model singularity (xi1^2 + x^2)^{-p/2} over
// [delta,1] x [0,1]; finite for p < 2 at delta = 0, log-divergent at p = 2.
double alpha_integrability(double p, double delta, double tol = 1e-9);

}  // namespace kbl
