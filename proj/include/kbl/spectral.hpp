#pragma once

#include <array>
#include <complex>
#include <map>
#include <memory>
#include <vector>

#include "kbl/collision.hpp"
#include "kbl/grids.hpp"
#include "kbl/small_linalg.hpp"

namespace kbl {

// Collision-invariant basis: X+, X0, X-, xi2 sqrt(M), xi3 sqrt(M).
// `chi` holds the analytic fields; `ortho` a discretely orthonormalized copy
// used for exact projections.
struct InvariantBasis {
    const VelocityGrid* grid = nullptr;
    std::vector<std::vector<double>> chi;
    std::vector<std::vector<double>> ortho;
    // ortho[a] = sum_b coeff[a][b] chi[b]; lets the orthonormalized family be
    // evaluated at off-grid velocities
    std::array<std::array<double, 5>, 5> coeff{};

    // worst deviation of <chi_a chi_b> from the identity
    double gram_defect = 0.0;

    std::vector<double> project_plus(const std::vector<double>& g) const;  // <g X+> X+
    const std::vector<double>& xplus() const { return chi[0]; }
    const std::vector<double>& xzero() const { return chi[1]; }
    const std::vector<double>& xminus() const { return chi[2]; }

    static double chi_at(int a, const std::array<double, 3>& xi);
    double ortho_at(int a, const std::array<double, 3>& xi) const;
};

InvariantBasis build_basis(const VelocityGrid& grid);

// Slow eigenpair of the transport pencil at drift u, with the derived
// difference-quotient eigenfunction.
struct EigenSolution {
    double u = 0.0;
    double du = 0.0;           // step used for the limit extrapolation
    double tau = 0.0;
    std::vector<double> phi;   // normalized: <(xi1+u) phi^2> = -u, <phi X+> >= 0
    std::vector<double> phi0;  // kernel-mode component of the branch limit
    std::vector<double> psi;   // (phi - phi0)/u
    double norm_residual = 0.0;      // |<(xi1+u) phi^2> + u|
    double pencil_residual = 0.0;    // ||L phi - tau (xi1+u) phi||_2 / ||phi||_2
    double overlap_pm = 0.0;         // alignment of the +-du eigenvectors
    double richardson_gap = 0.0;     // distance of the extrapolate from its kernel-mode part
    double w_phi_sup = 0.0;
    double w_psi_sup = 0.0;
    bool has_psi = false;
};

// Eigen machinery and the projected collision operator.  The assembled
// operator is sandwiched between projections off the discrete invariant
// span, so the five conservation defects of the quadrature are removed and
// tau = 0 is an exact fivefold pencil eigenvalue.  Everything downstream
// (penalization, admissibility, de-penalization moments) then closes to
// round-off.
class SpectralSolver {
public:
    SpectralSolver(const CollisionOperator& op, WeightParams weights, double r_max = 0.05,
                   int threads = 0);

    const VelocityGrid& grid() const { return *op_->grid; }
    const CollisionOperator& collision() const { return *op_; }
    const InvariantBasis& basis() const { return basis_; }
    const WeightParams& weights() const { return weights_; }

    // Projected operator, full-grid point coordinates.
    std::vector<double> apply_Ltilde(const std::vector<double>& f) const;
    std::vector<double> apply_Ktilde(const std::vector<double>& f) const;
    std::vector<double> project_off_kernel(std::vector<double> f) const;

    // <xi1 X0, Ltilde^+ (xi1 X0)>: sets the slow-branch slope tau_u ~ -u/S.
    double slope_constant();

    const EigenSolution& eigenpair(double u);
    const EigenSolution& eigenpair_with_psi(double u, double du = 1e-3);

    // rank-one penalization maps
    std::vector<double> p_u(const EigenSolution& e, const std::vector<double>& g) const;
    std::vector<double> P_u(const EigenSolution& e, const std::vector<double>& g) const;

private:
    struct EvenSpace {
        std::vector<std::size_t> rep;      // orbit representatives
        std::vector<std::size_t> node_of;  // full index of each representative
        std::vector<double> scale;         // sqrt(2 q)
        std::vector<int> rep_index;        // full node -> representative slot (or mirror's)
    };

    const CollisionOperator* op_;
    WeightParams weights_;
    double r_max_;
    int threads_;
    InvariantBasis basis_;
    EvenSpace even_;
    Matrix ltilde_even_;                      // scaled, symmetric, projected
    std::unique_ptr<LuFactor> deflated_lu_;   // LU of (Ltilde + c P_ker), even scaled coords
    std::vector<std::vector<double>> ker_even_;  // scaled orthonormal kernel (3 vectors)
    double deflation_shift_ = 0.0;
    double slope_ = 0.0;
    bool slope_ready_ = false;
    std::map<long long, EigenSolution> cache_;

    std::vector<double> to_even(const std::vector<double>& full) const;
    std::vector<double> to_full(const std::vector<double>& even) const;
    std::vector<double> deflated_solve(const std::vector<double>& rhs_even) const;
    EigenSolution solve_slow_branch(double u, const std::vector<double>* seed) const;
    const EigenSolution& eigenpair_continued(double u);
};

// Admissibility machinery: the 3x3 coupling matrix of the penalty moments,
// its left eigenvectors, and the two boundary functionals that must vanish
// for the de-penalized solution to solve the original problem.
struct AdmissibilityData {
    double u = 0.0, alpha = 0.0, beta = 0.0, gamma = 0.0;
    Matrix A;                                   // 3x3 moment-coupling matrix
    std::array<std::complex<double>, 3> mu;     // its eigenvalues
    double eig_margin = 0.0;                    // min pairwise gap
    std::vector<double> Y1, Y2;                 // admissibility fields on the grid
    std::array<double, 3> l1{}, l2{};           // left eigenvectors behind Y1, Y2
    std::array<double, 2> mode_rates{};         // Re(gamma - mu_i) of the selected modes
};

// alpha, beta default to 2*gamma (the shipped and tested configuration).
AdmissibilityData build_admissibility(SpectralSolver& solver, double u, double gamma,
                                      double alpha = -1.0, double beta = -1.0);

// r_i = <(xi1+u) Y_i g0>
std::array<double, 2> admissibility_residual(const VelocityGrid& grid, double u,
                                             const AdmissibilityData& adm,
                                             const std::vector<double>& g0);

}  // namespace kbl
