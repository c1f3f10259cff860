#include "kbl/kinetic_weight.hpp"

#include <cmath>
#include <stdexcept>

#include "kbl/numerics.hpp"
#include "kbl/simd.hpp"

namespace kbl {

double chi_cutoff(double s) {
    if (s < 0.0) throw std::invalid_argument("chi: negative argument");
    if (s <= 0.5) return s;
    if (s >= 2.0) return 1.0;
    double d = 2.0 - s;
    return 1.0 - d * d * d / 6.75;
}

double chi_cutoff_prime(double s) {
    if (s < 0.0) throw std::invalid_argument("chi: negative argument");
    if (s <= 0.5) return 1.0;
    if (s >= 2.0) return 0.0;
    double d = 2.0 - s;
    return d * d / 2.25;
}

double KineticWeight::alpha_tilde(double x, double xi1) const {
    if (x < 0.0) throw std::invalid_argument("alpha_tilde: x must be nonnegative");
    double a = xi1 + u;
    double b = c * nu0 * x;
    return std::sqrt(a * a + b * b);
}

double KineticWeight::alpha(double x, double xi1) const { return chi_cutoff(alpha_tilde(x, xi1)); }

VelocityLemmaReport verify_velocity_lemma(const KineticWeight& w, long samples, std::uint64_t seed,
                                          double slack, bool keep_rows) {
    VelocityLemmaReport rep;
    rep.samples = samples;
    Rng rng(seed);
    const double rate_t = 0.5 * w.c * w.nu0;
    const double rate_a = 2.0 * w.c * w.nu0;
    for (long k = 0; k < samples; ++k) {
        double x = (k % 3 == 0) ? std::fabs(2.0 * rng.normal()) : rng.uniform(0.0, 6.0);
        double xi1 = rng.uniform(-6.0, 6.0);
        double b = xi1 + w.u;
        double smax = 8.0;
        if (b > 1e-14) smax = std::min(smax, x / b);
        double s = rng.uniform(0.0, smax);
        if (x - s * b < 0.0) s = 0.0;  // guard against rounding at the boundary

        double at_here = w.alpha_tilde(x, xi1);
        double at_back = w.alpha_tilde(x - s * b, xi1);
        double lhs_t = std::exp(-rate_t * s) * at_back;
        double rhs_t = std::exp(rate_t * s) * at_back;
        double a_here = w.alpha(x, xi1);
        double a_back = w.alpha(x - s * b, xi1);
        double lhs_a = std::exp(-rate_a * s) * a_back;
        double rhs_a = std::exp(rate_a * s) * a_back;

        double scale_t = std::max(at_here, at_back) + 1e-300;
        double scale_a = std::max(a_here, a_back) + 1e-300;
        double m_t = std::min(at_here - lhs_t, rhs_t - at_here) / scale_t;
        double m_a = std::min(a_here - lhs_a, rhs_a - a_here) / scale_a;
        bool ok = (m_t >= -slack) && (m_a >= -slack);
        if (!ok) ++rep.violations;
        rep.worst_margin_tilde = std::min(rep.worst_margin_tilde, m_t);
        rep.worst_margin_alpha = std::min(rep.worst_margin_alpha, m_a);
        if (keep_rows) {
            rep.rows.push_back({x, xi1, s, lhs_t, at_here, rhs_t, lhs_a, a_here, rhs_a, ok});
        }
    }
    return rep;
}

NlnEvaluator::NlnEvaluator(const VelocityGrid& grid, const KineticWeight& w, double gauss_rate,
                           double theta_for_two)
    : grid_(&grid), w_(w), C_(gauss_rate) {
    const std::size_t n = grid.size();
    inner_weights_.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        inner_weights_[j] = grid.q[j] * std::exp(-C_ * grid.speed2(j));
    }
    // j-sum of the double kernel, independent of the evaluation point:
    // coef_k = sum_j q_j w^{-1}(xi_j) e^{-C|xi_j - xi_k|^2} / |xi_j - xi_k|
    two_kernel_coef_.assign(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        const double rc = std::cbrt(3.0 * grid.q[k] / (4.0 * M_PI));
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            double d0 = grid.xi1[j] - grid.xi1[k];
            double d1 = grid.xi2[j] - grid.xi2[k];
            double d2 = grid.xi3[j] - grid.xi3[k];
            double d = std::sqrt(d0 * d0 + d1 * d1 + d2 * d2);
            double invr = (d >= rc) ? 1.0 / d : cell_averaged_inv_r(d, rc);
            s += grid.q[j] * std::exp(-theta_for_two * grid.speed2(j)) *
                 std::exp(-C_ * d * d) * invr;
        }
        two_kernel_coef_[k] = s;
    }
}

std::vector<double> NlnEvaluator::kernel_weights(const std::array<double, 3>& xi) const {
    const VelocityGrid& g = *grid_;
    const std::size_t n = g.size();
    std::vector<double> wts(n);
    for (std::size_t j = 0; j < n; ++j) {
        double d0 = xi[0] - g.xi1[j];
        double d1 = xi[1] - g.xi2[j];
        double d2 = xi[2] - g.xi3[j];
        double d = std::sqrt(d0 * d0 + d1 * d1 + d2 * d2);
        const double rc = std::cbrt(3.0 * g.q[j] / (4.0 * M_PI));
        double invr = (d >= rc) ? 1.0 / d : cell_averaged_inv_r(d, rc);
        wts[j] = g.q[j] * std::exp(-C_ * d * d) * invr;
    }
    return wts;
}

double NlnEvaluator::time_integral(double nu_rate, double b, double x, double lo, double hi,
                                   const std::vector<double>& wts) const {
    const VelocityGrid& g = *grid_;
    const std::size_t n = g.size();
    auto f = [&](double y) {
        double pos = x - y * b;
        if (pos < 0.0) pos = 0.0;  // admissible samples keep pos >= 0 up to rounding
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            s += wts[j] / w_.alpha(pos, g.xi1[j]);
        }
        return std::exp(-nu_rate * y) * s;
    };
    return adaptive_simpson(f, lo, hi, 1e-8, 28);
}

NlnEvaluator::Result NlnEvaluator::outer(const std::array<double, 3>& xi, double x, double t,
                                         double T) const {
    if (T > t) throw std::invalid_argument("nln: T must not exceed t");
    double b = xi[0] + w_.u;
    if (x - T * b < 0.0) throw std::invalid_argument("nln: inadmissible geometry, x - T(xi1+u) < 0");
    auto wts = kernel_weights(xi);
    double nu = collision_frequency(xi);
    Result r;
    r.value = time_integral(0.5 * nu, b, x, 0.0, T, wts);
    double a = w_.alpha(x, xi[0]);
    double norm = (T > 1.0) ? t : (std::sqrt(T) + T * std::log(t));
    r.ratio = r.value * a / norm;
    return r;
}

NlnEvaluator::Result NlnEvaluator::inner(const std::array<double, 3>& xi, double x, double t) const {
    double b = xi[0] + w_.u;
    if (x - t * b < 0.0 && b > 0.0) {
        // integrate only over the admissible backward window
        t = x / b;
    }
    double nu = collision_frequency(xi);
    const VelocityGrid& g = *grid_;
    auto f = [&](double y) {
        double pos = x - y * b;
        if (pos < 0.0) pos = 0.0;
        double s = 0.0;
        for (std::size_t j = 0; j < g.size(); ++j) {
            s += inner_weights_[j] / w_.alpha(pos, g.xi1[j]);
        }
        return std::exp(-nu * y) * s;
    };
    Result r;
    r.value = adaptive_simpson(f, 0.0, t, 1e-8, 28);
    r.ratio = r.value * w_.alpha(x, xi[0]) / t;
    return r;
}

NlnEvaluator::Result NlnEvaluator::two_kernel(const std::array<double, 3>& xi, double x,
                                              double t) const {
    double b = xi[0] + w_.u;
    if (x - t * b < 0.0 && b > 0.0) t = x / b;
    double nu = collision_frequency(xi);
    const VelocityGrid& g = *grid_;
    auto f = [&](double y) {
        double pos = x - y * b;
        if (pos < 0.0) pos = 0.0;
        double s = 0.0;
        for (std::size_t k = 0; k < g.size(); ++k) {
            s += two_kernel_coef_[k] * g.q[k] / w_.alpha(pos, g.xi1[k]);
        }
        return std::exp(-nu * y) * s;
    };
    Result r;
    r.value = adaptive_simpson(f, 0.0, t, 1e-8, 28);
    r.ratio = r.value * w_.alpha(x, xi[0]) / t;
    return r;
}

double NlnEvaluator::unit_alpha_value(const std::array<double, 3>& xi, double /*t*/, double T) const {
    auto wts = kernel_weights(xi);
    double ks = simd::sum(wts.data(), wts.size());
    double nu = collision_frequency(xi);
    // exact time integral of e^{-nu y / 2} over [0, T]
    return ks * 2.0 / nu * (1.0 - std::exp(-0.5 * nu * T));
}

double alpha_integrability(double p, double delta, double tol) {
    if (p < 1.0 || p > 2.0) throw std::invalid_argument("alpha_integrability: p must lie in [1, 2]");
    if (delta < 0.0 || delta >= 1.0) throw std::invalid_argument("alpha_integrability: bad delta");
    if (p == 2.0 && delta == 0.0) {
        throw std::invalid_argument("alpha_integrability: p = 2 diverges at delta = 0");
    }
    auto inner = [&](double q) {
        if (p == 1.0) return std::asinh(1.0 / q);
        if (p == 2.0) return std::atan(1.0 / q) / q;
        auto f = [&](double x) { return std::pow(q * q + x * x, -0.5 * p); };
        return adaptive_simpson(f, 0.0, 1.0, tol * 1e-2, 36);
    };
    // geometric panels toward q = 0 handle the integrable endpoint
    double total = 0.0;
    double hi = 1.0;
    const double floor_q = std::max(delta, 1e-8);
    while (hi > floor_q) {
        double lo = std::max(0.5 * hi, floor_q);
        total += adaptive_simpson(inner, lo, hi, tol * 1e-2, 30);
        hi = lo;
    }
    if (delta == 0.0 && p < 2.0) {
        // analytic remainder below the floor: inner(q) ~ Ip q^{1-p} - 1/(p-1)
        // with Ip = int_0^inf (1+s^2)^{-p/2} ds
        if (p == 1.0) {
            // inner(q) ~ ln(2/q): remainder q (1 + ln(2/q))
            double q = floor_q;
            total += q * (1.0 + std::log(2.0 / q));
        } else {
            // Ip = int_0^inf (1+s^2)^{-p/2} ds, with the far branch mapped to
            // [0,1] and its v^{p-2} endpoint split off analytically
            double Ip = adaptive_simpson(
                             [&](double s) { return std::pow(1.0 + s * s, -0.5 * p); }, 0.0, 1.0,
                             tol * 1e-2, 36) +
                        1.0 / (p - 1.0) +
                        adaptive_simpson(
                            [&](double v) {
                                return std::pow(v, p - 2.0) *
                                       (std::pow(1.0 + v * v, -0.5 * p) - 1.0);
                            },
                            1e-30, 1.0, tol * 1e-2, 40);
            double q = floor_q;
            total += Ip * std::pow(q, 2.0 - p) / (2.0 - p) - q / (p - 1.0);
        }
    }
    return total;
}

}  // namespace kbl
