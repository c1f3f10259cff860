#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kbl/grids.hpp"

namespace kbl {

// Hard-sphere collision frequency nu(xi) = 2*pi * int M(v) |xi - v| dv,
// reduced to a 1-D radial integral and evaluated adaptively.
double collision_frequency(double speed);
double collision_frequency(const std::array<double, 3>& xi);

struct GradConstants {
    double ck1 = 1.0;
    double ck2 = 1.0;
    std::string mode = "normalized";  // "normalized" (1,1) or "physical" (calibrated)
};

// Calibrated against the quadratic-operator quadrature; see
// validate_K_against_Q.  ck1 carries the loss sign.
GradConstants normalized_constants();
GradConstants physical_constants();

// Smooth + singular kernel parts, constants applied by the caller.
double grad_kernel_k1(const std::array<double, 3>& a, const std::array<double, 3>& b);
double grad_kernel_k2(const std::array<double, 3>& a, const std::array<double, 3>& b);
// ck1*k1 + ck2*k2; rejects coincident points (the 1/|xi-xi'| factor).
double grad_kernel(const std::array<double, 3>& a, const std::array<double, 3>& b,
                   const GradConstants& c);

// Assembled collision machinery on a velocity grid.  The kernel matrix is
// stored premultiplied by the quadrature weights, khat_ij = k(xi_i, xi_j) q_j,
// with the integrable 1/|xi - xi'| singularity replaced on the self cell by
// its average over an equal-volume ball.
struct CollisionOperator {
    const VelocityGrid* grid = nullptr;
    GradConstants constants;
    std::vector<double> nu;    // collision frequency per node
    std::vector<double> khat;  // dense, row-major, nv x nv
    double nu0 = 0.0;          // computed lower bound of nu/(1+|xi|)
    double nu1 = 0.0;          // computed upper bound

    std::size_t size() const { return nu.size(); }

    std::vector<double> apply_K(const std::vector<double>& f) const;
    std::vector<double> apply_L(const std::vector<double>& f) const;

    // Row of khat at an arbitrary (possibly off-grid) velocity, with the same
    // near-singularity regularization as the assembled matrix.
    std::vector<double> kernel_row_at(const std::array<double, 3>& xi) const;
    double apply_K_at(const std::array<double, 3>& xi, const std::vector<double>& f) const;

    // sup-style table for the weighted kernel: rows of
    // (1 + |xi_i|) * sum_j |k(xi_i, xi_j)| e^{theta(|xi_i|^2 - |xi_j|^2)} q_j.
    std::vector<double> ktheta_rowsums(double theta) const;

    void save_cache(const std::string& path, std::uint64_t config_hash) const;
    static bool load_cache(const std::string& path, std::uint64_t config_hash,
                           const VelocityGrid& grid, CollisionOperator& out);
};

CollisionOperator assemble_collision(const VelocityGrid& grid, const GradConstants& constants,
                                     int threads = 0);

// ---------------------------------------------------------------------------
// Nonlinear bilinear form.

enum class GammaMethod { ProductQuadrature, MonteCarlo };

// Evaluator for the symmetrized bilinear collision form around the global
// Maxwellian.  The star-point interaction list is pruned by the sqrt(M)
// factor; scattered arguments are read back through trilinear interpolation
// (zero outside the truncation box).  For repeated same-argument use on
// uniform grids the scattering geometry is tabulated once per output node.
class GammaEvaluator {
public:
    GammaEvaluator(const VelocityGrid& grid, GammaMethod method, std::uint64_t seed = 2024,
                   int mc_samples = 4096, double prune_tol = 1e-9);

    GammaMethod method() const { return method_; }
    std::size_t sample_count() const;

    // Gamma(f, g) on all grid nodes.  When both arguments are the same field
    // and reflection-even, only orbit representatives are evaluated and the
    // result is mirrored.
    std::vector<double> evaluate(const std::vector<double>& f, const std::vector<double>& g,
                                 int threads = 0, bool even_args = false) const;

    // Gamma(f, g) at one (possibly off-grid) velocity; point values of the
    // arguments may be supplied to bypass interpolation at the output point.
    double evaluate_at(const std::array<double, 3>& xi, const std::vector<double>& f,
                       const std::vector<double>& g) const;
    double evaluate_at(const std::array<double, 3>& xi, const std::vector<double>& f,
                       const std::vector<double>& g, double f_at_xi, double g_at_xi) const;

private:
    struct Stencil {
        std::int32_t corner = -1;  // flat base index; -1 marks a clipped point
        float fx = 0, fy = 0, fz = 0;
    };
    struct Sample {
        float w = 0;
        Stencil a, b;
    };

    const VelocityGrid* grid_;
    GammaMethod method_;
    std::uint64_t seed_;
    int mc_samples_;
    std::vector<std::size_t> star_;     // pruned interaction list
    std::vector<double> star_weight_;   // q_j * sqrt(M)(xi_j)
    std::vector<double> sqrtM_;
    mutable std::vector<std::vector<Sample>> table_;  // per output node, lazily built
    mutable bool table_ready_ = false;

    void build_tables(int threads) const;
    double gain_tabulated(std::size_t node, const std::vector<double>& f) const;
    double gain_at(const std::array<double, 3>& xi, const std::vector<double>& f,
                   const std::vector<double>& g) const;
    double loss_at(const std::array<double, 3>& xi, const std::vector<double>& f,
                   const std::vector<double>& g, double f_at, double g_at) const;
};

// ---------------------------------------------------------------------------
// Direct quadratic-operator oracle.

// K f at one velocity evaluated straight from the quadratic collision
// integrals (no Grad kernel), by fixed-seed Monte Carlo over (v_*, omega).
// Returns the estimate and its standard error.
struct DirectKEstimate {
    double value = 0.0;
    double stderr_ = 0.0;
};
DirectKEstimate direct_K_row(const std::function<double(const std::array<double, 3>&)>& f,
                             const std::array<double, 3>& xi, long samples, std::uint64_t seed);

struct KDiscrepancyRow {
    std::array<double, 3> xi;
    double grad_value = 0.0;    // assembled-kernel row applied to f
    double direct_value = 0.0;  // quadratic-operator quadrature
    double direct_stderr = 0.0;
    double rel_error = 0.0;
};

// Row discrepancy between the assembled kernel K and the direct quadratic
// operator, for an analytic test function sampled on the grid.
std::vector<KDiscrepancyRow> validate_K_against_Q(
    const CollisionOperator& op, const std::function<double(const std::array<double, 3>&)>& f,
    const std::vector<std::array<double, 3>>& rows, long samples, std::uint64_t seed);

// Quadrature rows of the two kernel parts with unit constants, using the
// same sub-cell integration as the assembly.
void kernel_unit_rows(const VelocityGrid& grid, const std::array<double, 3>& xi,
                      std::vector<double>& k1_row, std::vector<double>& k2_row);

// Least-squares fit of (ck1, ck2) so the two-part kernel matches the direct
// operator on the given rows.
GradConstants calibrate_constants(const VelocityGrid& grid,
                                  const std::vector<std::array<double, 3>>& rows, long samples,
                                  std::uint64_t seed);

}  // namespace kbl
