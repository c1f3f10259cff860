#include "kbl/collision.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "kbl/numerics.hpp"
#include "kbl/simd.hpp"

namespace kbl {

namespace {

inline double dist3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    double d0 = a[0] - b[0], d1 = a[1] - b[1], d2 = a[2] - b[2];
    return std::sqrt(d0 * d0 + d1 * d1 + d2 * d2);
}

inline double speed2(const std::array<double, 3>& a) {
    return a[0] * a[0] + a[1] * a[1] + a[2] * a[2];
}

// Angular mean of |xi - v| over directions of v at fixed speeds.
inline double angular_mean_dist(double z, double r) {
    if (z > r) return z + r * r / (3.0 * z);
    if (r == 0.0) return z;
    return r + z * z / (3.0 * r);
}

}  // namespace

double collision_frequency(double speed) {
    if (speed < 0.0) throw std::invalid_argument("collision_frequency: negative speed");
    const double c = 2.0 * std::sqrt(2.0 * M_PI);  // 2*pi * (2*pi)^{-3/2} * 4*pi
    auto integrand = [&](double r) {
        return std::exp(-0.5 * r * r) * r * r * angular_mean_dist(speed, r);
    };
    // The Gaussian factor makes [0, 12] numerically exhaustive.
    double val = adaptive_simpson(integrand, 0.0, 12.0, 1e-12, 48);
    return c * val;
}

double collision_frequency(const std::array<double, 3>& xi) {
    return collision_frequency(std::sqrt(speed2(xi)));
}

GradConstants normalized_constants() { return GradConstants{1.0, 1.0, "normalized"}; }

GradConstants physical_constants() {
    // Calibrated against the quadratic-operator quadrature (the loss part is
    // exact: 2*pi*(2*pi)^{-3/2}; the gain constant follows from the row
    // identity on sqrt(M)).  Verified by validate_K_against_Q.
    GradConstants c;
    c.ck1 = -1.0 / std::sqrt(2.0 * M_PI);      // -0.3989422804014327
    c.ck2 = 2.0 * std::sqrt(2.0 / M_PI);       //  1.5957691216057308
    c.mode = "physical";
    return c;
}

double grad_kernel_k1(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    double d = dist3(a, b);
    return d * std::exp(-0.25 * (speed2(a) + speed2(b)));
}

double grad_kernel_k2(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    double d = dist3(a, b);
    if (d == 0.0) throw std::invalid_argument("grad_kernel: coincident velocities (1/|xi-xi'| singularity)");
    double ds = speed2(a) - speed2(b);
    return (1.0 / d) * std::exp(-0.125 * d * d - 0.125 * (ds * ds) / (d * d));
}

double grad_kernel(const std::array<double, 3>& a, const std::array<double, 3>& b,
                   const GradConstants& c) {
    return c.ck1 * grad_kernel_k1(a, b) + c.ck2 * grad_kernel_k2(a, b);
}

namespace {

// Kernel value with the near-singularity regularization: within the
// equal-volume ball of the target cell the 1/r factor is replaced by its
// ball average.
double kernel_regularized(const std::array<double, 3>& a, const std::array<double, 3>& b,
                          double rc, const GradConstants& c) {
    double d = dist3(a, b);
    double k1, k2;
    if (d >= rc) {
        k1 = grad_kernel_k1(a, b);
        k2 = grad_kernel_k2(a, b);
    } else {
        double inv_r = cell_averaged_inv_r(d, rc);
        k1 = d * std::exp(-0.25 * (speed2(a) + speed2(b)));
        double ds = speed2(a) - speed2(b);
        double cross = (d > 0.0) ? (ds * ds) / (d * d) : 0.0;
        k2 = inv_r * std::exp(-0.125 * d * d - 0.125 * cross);
    }
    return c.ck1 * k1 + c.ck2 * k2;
}

// Cell average of the kernel when the singular point sits at the cell
// center: exact ball quadrature of the 1/r part, angular closed form for
// the ridge factor exp(-((|xi|^2-|xi'|^2)/r)^2 / 8) ~ exp(-|xi|^2 mu^2 / 2).
double self_cell_average(const std::array<double, 3>& a, double vol, const GradConstants& c) {
    const double rc = std::cbrt(3.0 * vol / (4.0 * M_PI));
    const double z = std::sqrt(speed2(a));
    double ang = 1.0;
    if (z > 1e-8) ang = std::sqrt(0.5 * M_PI) * std::erf(z / std::sqrt(2.0)) / z;
    // (3/rc^3) int_0^rc r exp(-r^2/8) dr
    double rad = (3.0 / (rc * rc * rc)) * 4.0 * (1.0 - std::exp(-0.125 * rc * rc));
    double k2avg = rad * ang;
    double k1avg = 0.75 * rc * std::exp(-0.5 * speed2(a));
    return c.ck1 * k1avg + c.ck2 * k2avg;
}

// Average of k(a, .) over the cell of node j by tensor Gauss quadrature.
// The |a - xi'| kink and the 1/|a - xi'| factor make the plain midpoint
// rule first-order near the diagonal; sub-cell quadrature restores accuracy.
double subcell_average(const std::array<double, 3>& a, const std::array<double, 3>& center,
                       double half_width, int npts, const GradConstants& c) {
    struct Rules {
        std::vector<double> x[4], w[4];
        Rules() {
            for (int k = 2; k <= 5; ++k) gauss_legendre(k, x[k - 2], w[k - 2]);
        }
    };
    static const Rules rules;  // magic-static init keeps this thread-safe
    npts = std::min(std::max(npts, 2), 5);
    const std::vector<double>& gx = rules.x[npts - 2];
    const std::vector<double>& gw = rules.w[npts - 2];
    double acc = 0.0, wacc = 0.0;
    for (int ia = 0; ia < npts; ++ia) {
        for (int ib = 0; ib < npts; ++ib) {
            for (int ic = 0; ic < npts; ++ic) {
                std::array<double, 3> p = {center[0] + half_width * gx[ia],
                                           center[1] + half_width * gx[ib],
                                           center[2] + half_width * gx[ic]};
                double w = gw[ia] * gw[ib] * gw[ic];
                acc += w * (c.ck1 * grad_kernel_k1(a, p) + c.ck2 * grad_kernel_k2(a, p));
                wacc += w;
            }
        }
    }
    return acc / wacc;
}

// Directed cell-averaged kernel from a's point of view over the cell of b.
// Every cell is integrated, not sampled: the 1/r factor, the |a-xi'| kink
// and the narrow exp(-((|a|^2-|xi'|^2)/|a-xi'|)^2/8) ridge all vary on
// scales comparable to one cell.
double cell_kernel(const std::array<double, 3>& a, const std::array<double, 3>& b, double vol,
                   bool can_subdivide, const GradConstants& c) {
    double d = dist3(a, b);
    const double h = std::cbrt(vol);
    if (d < 1e-12) return self_cell_average(a, vol, c);
    if (!can_subdivide) {
        const double rc = std::cbrt(3.0 * vol / (4.0 * M_PI));
        return kernel_regularized(a, b, rc, c);
    }
    if (d <= 3.2 * h) return subcell_average(a, b, 0.5 * h, 3, c);
    if (d <= 6.5 * h) return subcell_average(a, b, 0.5 * h, 2, c);
    return c.ck1 * grad_kernel_k1(a, b) + c.ck2 * grad_kernel_k2(a, b);
}

}  // namespace

CollisionOperator assemble_collision(const VelocityGrid& grid, const GradConstants& constants,
                                     int threads) {
    CollisionOperator op;
    op.grid = &grid;
    op.constants = constants;
    const std::size_t n = grid.size();
    op.nu.resize(n);
    op.khat.assign(n * n, 0.0);

    // Frequency table: the radial integral depends on |xi| only.
    parallel_for(n, threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            op.nu[i] = collision_frequency(std::sqrt(grid.speed2(i)));
        }
    });

    // Tensor sub-cell quadrature needs cells that are actual volumes, which
    // holds for the uniform scheme only.
    const bool subdivide = (grid.scheme == VelocityScheme::Uniform);

    // Upper triangle, then mirrored: the stored kernel value of a pair is the
    // average of the two directed cell averages, so symmetry is exact by
    // construction.
    parallel_for(n, threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const std::array<double, 3> a = grid.node(i);
            for (std::size_t j = i; j < n; ++j) {
                double vij = cell_kernel(a, grid.node(j), grid.q[j], subdivide, constants);
                double k = vij;
                if (j != i) {
                    double vji = cell_kernel(grid.node(j), a, grid.q[i], subdivide, constants);
                    k = 0.5 * (vij + vji);
                }
                op.khat[i * n + j] = k * grid.q[j];
                op.khat[j * n + i] = k * grid.q[i];
            }
        }
    });

    op.nu0 = 1e300;
    op.nu1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double r = op.nu[i] / (1.0 + std::sqrt(grid.speed2(i)));
        op.nu0 = std::min(op.nu0, r);
        op.nu1 = std::max(op.nu1, r);
    }
    return op;
}

std::vector<double> CollisionOperator::apply_K(const std::vector<double>& f) const {
    if (f.size() != size()) throw std::invalid_argument("apply_K: field size mismatch");
    std::vector<double> out(size());
    simd::matvec(khat.data(), size(), size(), f.data(), out.data());
    return out;
}

std::vector<double> CollisionOperator::apply_L(const std::vector<double>& f) const {
    std::vector<double> out = apply_K(f);
    for (std::size_t i = 0; i < size(); ++i) out[i] = nu[i] * f[i] - out[i];
    return out;
}

void kernel_unit_rows(const VelocityGrid& grid, const std::array<double, 3>& xi,
                      std::vector<double>& k1_row, std::vector<double>& k2_row) {
    const bool subdivide = (grid.scheme == VelocityScheme::Uniform);
    const std::size_t n = grid.size();
    k1_row.resize(n);
    k2_row.resize(n);
    GradConstants c1{1.0, 0.0, "unit"};
    GradConstants c2{0.0, 1.0, "unit"};
    for (std::size_t j = 0; j < n; ++j) {
        k1_row[j] = cell_kernel(xi, grid.node(j), grid.q[j], subdivide, c1) * grid.q[j];
        k2_row[j] = cell_kernel(xi, grid.node(j), grid.q[j], subdivide, c2) * grid.q[j];
    }
}

std::vector<double> CollisionOperator::kernel_row_at(const std::array<double, 3>& xi) const {
    const std::size_t n = size();
    const bool subdivide = (grid->scheme == VelocityScheme::Uniform);
    std::vector<double> row(n);
    for (std::size_t j = 0; j < n; ++j) {
        row[j] = cell_kernel(xi, grid->node(j), grid->q[j], subdivide, constants) * grid->q[j];
    }
    return row;
}

double CollisionOperator::apply_K_at(const std::array<double, 3>& xi, const std::vector<double>& f) const {
    std::vector<double> row = kernel_row_at(xi);
    return simd::dot(row.data(), f.data(), size());
}

std::vector<double> CollisionOperator::ktheta_rowsums(double theta) const {
    const std::size_t n = size();
    std::vector<double> w(n), out(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = std::exp(theta * grid->speed2(i));
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = khat.data() + i * n;
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += std::fabs(row[j]) * w[i] / w[j];
        out[i] = (1.0 + std::sqrt(grid->speed2(i))) * s;
    }
    return out;
}

namespace {
constexpr std::uint64_t kCacheMagic = 0x4b424c4f50763101ULL;  // "KBLOPv1"+1
}

void CollisionOperator::save_cache(const std::string& path, std::uint64_t config_hash) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cache: cannot write '" + path + "'");
    std::uint64_t n = size();
    out.write(reinterpret_cast<const char*>(&kCacheMagic), 8);
    out.write(reinterpret_cast<const char*>(&config_hash), 8);
    out.write(reinterpret_cast<const char*>(&n), 8);
    out.write(reinterpret_cast<const char*>(&nu0), 8);
    out.write(reinterpret_cast<const char*>(&nu1), 8);
    out.write(reinterpret_cast<const char*>(nu.data()), 8 * n);
    out.write(reinterpret_cast<const char*>(khat.data()), 8 * n * n);
    if (!out) throw std::runtime_error("cache: short write to '" + path + "'");
}

bool CollisionOperator::load_cache(const std::string& path, std::uint64_t config_hash,
                                   const VelocityGrid& grid, CollisionOperator& out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    std::uint64_t magic = 0, hash = 0, n = 0;
    in.read(reinterpret_cast<char*>(&magic), 8);
    in.read(reinterpret_cast<char*>(&hash), 8);
    in.read(reinterpret_cast<char*>(&n), 8);
    if (!in || magic != kCacheMagic || hash != config_hash || n != grid.size()) return false;
    out.grid = &grid;
    out.nu.resize(n);
    out.khat.resize(n * n);
    in.read(reinterpret_cast<char*>(&out.nu0), 8);
    in.read(reinterpret_cast<char*>(&out.nu1), 8);
    in.read(reinterpret_cast<char*>(out.nu.data()), 8 * n);
    in.read(reinterpret_cast<char*>(out.khat.data()), 8 * n * n);
    return static_cast<bool>(in);
}

}  // namespace kbl
