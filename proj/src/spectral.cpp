#include "kbl/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "kbl/numerics.hpp"
#include "kbl/simd.hpp"

namespace kbl {

namespace {

long long key_of(double u) {
    long long k;
    std::memcpy(&k, &u, sizeof(k));
    return k;
}

double qdot(const VelocityGrid& g, const std::vector<double>& a, const std::vector<double>& b) {
    return simd::dot3(g.q.data(), a.data(), b.data(), g.size());
}

}  // namespace

InvariantBasis build_basis(const VelocityGrid& grid) {
    InvariantBasis b;
    b.grid = &grid;
    auto sM = sqrt_maxwellian_table(grid);
    const std::size_t n = grid.size();
    const double c30 = 1.0 / std::sqrt(30.0);
    const double c10 = 1.0 / std::sqrt(10.0);
    const double r15 = std::sqrt(15.0);
    b.chi.assign(5, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
        double s2 = grid.speed2(i);
        b.chi[0][i] = c30 * (s2 + r15 * grid.xi1[i]) * sM[i];  // X+
        b.chi[1][i] = c10 * (s2 - 5.0) * sM[i];                // X0
        b.chi[2][i] = c30 * (s2 - r15 * grid.xi1[i]) * sM[i];  // X-
        b.chi[3][i] = grid.xi2[i] * sM[i];
        b.chi[4][i] = grid.xi3[i] * sM[i];
    }
    b.gram_defect = 0.0;
    for (int a = 0; a < 5; ++a) {
        for (int c = a; c < 5; ++c) {
            double g = qdot(grid, b.chi[a], b.chi[c]) - (a == c ? 1.0 : 0.0);
            b.gram_defect = std::max(b.gram_defect, std::fabs(g));
        }
    }
    // Gram-Schmidt in the quadrature inner product, tracking the expansion
    // coefficients so the orthonormal family stays evaluable off the grid.
    b.ortho.assign(5, std::vector<double>(n));
    for (int a = 0; a < 5; ++a) b.coeff[a][a] = 1.0;
    for (int a = 0; a < 5; ++a) {
        std::vector<double> v = b.chi[a];
        std::array<double, 5> cf = b.coeff[a];
        for (int pass = 0; pass < 2; ++pass) {
            for (int c = 0; c < a; ++c) {
                double proj = qdot(grid, v, b.ortho[c]);
                for (std::size_t i = 0; i < n; ++i) v[i] -= proj * b.ortho[c][i];
                for (int k = 0; k < 5; ++k) cf[k] -= proj * b.coeff[c][k];
            }
        }
        double nrm = std::sqrt(qdot(grid, v, v));
        if (nrm < 1e-8) throw std::runtime_error("build_basis: invariant family is numerically degenerate");
        for (std::size_t i = 0; i < n; ++i) v[i] /= nrm;
        for (int k = 0; k < 5; ++k) cf[k] /= nrm;
        b.ortho[a] = std::move(v);
        b.coeff[a] = cf;
    }
    return b;
}

double InvariantBasis::chi_at(int a, const std::array<double, 3>& xi) {
    const double s2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
    const double sM = std::pow(2.0 * M_PI, -0.75) * std::exp(-0.25 * s2);
    switch (a) {
        case 0: return (s2 + std::sqrt(15.0) * xi[0]) * sM / std::sqrt(30.0);
        case 1: return (s2 - 5.0) * sM / std::sqrt(10.0);
        case 2: return (s2 - std::sqrt(15.0) * xi[0]) * sM / std::sqrt(30.0);
        case 3: return xi[1] * sM;
        case 4: return xi[2] * sM;
        default: throw std::invalid_argument("chi_at: index out of range");
    }
}

double InvariantBasis::ortho_at(int a, const std::array<double, 3>& xi) const {
    double s = 0.0;
    for (int k = 0; k < 5; ++k) {
        if (coeff[a][k] != 0.0) s += coeff[a][k] * chi_at(k, xi);
    }
    return s;
}

std::vector<double> InvariantBasis::project_plus(const std::vector<double>& g) const {
    double c = qdot(*grid, g, chi[0]);
    std::vector<double> out(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = c * chi[0][i];
    return out;
}

SpectralSolver::SpectralSolver(const CollisionOperator& op, WeightParams weights, double r_max,
                               int threads)
    : op_(&op), weights_(weights), r_max_(r_max), threads_(threads) {
    weights_.validate();
    const VelocityGrid& g = *op.grid;
    basis_ = build_basis(g);

    // reflection orbits; tensor grids with even per-axis counts have no
    // self-paired nodes
    const std::size_t n = g.size();
    even_.rep_index.assign(n, -1);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t j = g.reflect[i];
        if (j == i) throw std::runtime_error("spectral: node fixed by the reflection map");
        if (i < j) {
            even_.rep.push_back(i);
            even_.node_of.push_back(i);
        }
    }
    const std::size_t m = even_.rep.size();
    even_.scale.resize(m);
    for (std::size_t r = 0; r < m; ++r) {
        even_.scale[r] = std::sqrt(2.0 * g.q[even_.rep[r]]);
        even_.rep_index[even_.rep[r]] = static_cast<int>(r);
        even_.rep_index[g.reflect[even_.rep[r]]] = static_cast<int>(r);
    }

    // scaled symmetric even-sector operator
    ltilde_even_ = Matrix(m, m);
    parallel_for(m, threads_, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t r = lo; r < hi; ++r) {
            const std::size_t ir = even_.rep[r];
            const double* krow = op.khat.data() + ir * n;
            for (std::size_t s = 0; s < m; ++s) {
                const std::size_t is = even_.rep[s];
                double keven = krow[is] + krow[g.reflect[is]];
                double v = (r == s ? op.nu[ir] : 0.0) - keven;
                ltilde_even_(r, s) = even_.scale[r] * v / even_.scale[s];
            }
        }
    });
    // exact symmetry of the scaled operator (the assembly is symmetric up to
    // the q-scaling rounding)
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t s = r + 1; s < m; ++s) {
            double v = 0.5 * (ltilde_even_(r, s) + ltilde_even_(s, r));
            ltilde_even_(r, s) = v;
            ltilde_even_(s, r) = v;
        }
    }

    // even-sector kernel vectors, orthonormal in scaled coordinates
    std::vector<std::vector<double>> ker;
    for (int a = 0; a < 3; ++a) ker.push_back(to_even(basis_.chi[a]));
    ker_even_ = orthonormalize(ker);
    if (ker_even_.size() != 3) throw std::runtime_error("spectral: even kernel basis degenerate");

    // project the operator off the invariant span, making tau = 0 an exact
    // pencil eigenvalue with the conservation defects of the quadrature
    // removed: Ltilde = P L P
    {
        std::vector<std::vector<double>> lx(3, std::vector<double>(m));
        Matrix xTlx(3, 3);
        for (int a = 0; a < 3; ++a) {
            simd::matvec(ltilde_even_.a.data(), m, m, ker_even_[a].data(), lx[a].data());
        }
        for (int a = 0; a < 3; ++a) {
            for (int c = 0; c < 3; ++c) {
                xTlx(a, c) = simd::dot(ker_even_[a].data(), lx[c].data(), m);
            }
        }
        parallel_for(m, threads_, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t r = lo; r < hi; ++r) {
                double* row = ltilde_even_.row(r);
                for (std::size_t s = 0; s < m; ++s) {
                    double corr = 0.0;
                    for (int a = 0; a < 3; ++a) {
                        corr += ker_even_[a][r] * lx[a][s] + lx[a][r] * ker_even_[a][s];
                        for (int c = 0; c < 3; ++c) {
                            corr -= ker_even_[a][r] * xTlx(a, c) * ker_even_[c][s];
                        }
                    }
                    row[s] -= corr;
                }
            }
        });
    }

    // deflated factorization: Ltilde + c * sum x x^T  (u-independent)
    deflation_shift_ = op.nu0 > 0.0 ? op.nu0 : 1.0;
    Matrix defl = ltilde_even_;
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t s = 0; s < m; ++s) {
            double add = 0.0;
            for (int a = 0; a < 3; ++a) add += ker_even_[a][r] * ker_even_[a][s];
            defl(r, s) += deflation_shift_ * add;
        }
    }
    deflated_lu_ = std::make_unique<LuFactor>(std::move(defl));
}

std::vector<double> SpectralSolver::to_even(const std::vector<double>& full) const {
    const std::size_t m = even_.rep.size();
    std::vector<double> out(m);
    for (std::size_t r = 0; r < m; ++r) out[r] = even_.scale[r] * full[even_.rep[r]];
    return out;
}

std::vector<double> SpectralSolver::to_full(const std::vector<double>& even) const {
    const VelocityGrid& g = *op_->grid;
    std::vector<double> out(g.size());
    for (std::size_t r = 0; r < even_.rep.size(); ++r) {
        double v = even[r] / even_.scale[r];
        out[even_.rep[r]] = v;
        out[g.reflect[even_.rep[r]]] = v;
    }
    return out;
}

std::vector<double> SpectralSolver::project_off_kernel(std::vector<double> f) const {
    const VelocityGrid& g = *op_->grid;
    for (int a = 0; a < 5; ++a) {
        double c = qdot(g, f, basis_.ortho[a]);
        simd::axpy(-c, basis_.ortho[a].data(), f.data(), f.size());
    }
    return f;
}

std::vector<double> SpectralSolver::apply_Ltilde(const std::vector<double>& f) const {
    std::vector<double> p = project_off_kernel(f);
    std::vector<double> y = op_->apply_L(p);
    return project_off_kernel(std::move(y));
}

std::vector<double> SpectralSolver::apply_Ktilde(const std::vector<double>& f) const {
    std::vector<double> lt = apply_Ltilde(f);
    std::vector<double> out(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) out[i] = op_->nu[i] * f[i] - lt[i];
    return out;
}

std::vector<double> SpectralSolver::deflated_solve(const std::vector<double>& rhs_even) const {
    const std::size_t m = rhs_even.size();
    std::vector<double> rhs = rhs_even;
    for (const auto& x : ker_even_) {
        double c = simd::dot(x.data(), rhs.data(), m);
        simd::axpy(-c, x.data(), rhs.data(), m);
    }
    std::vector<double> z = deflated_lu_->solve(rhs);
    for (const auto& x : ker_even_) {
        double c = simd::dot(x.data(), z.data(), m);
        simd::axpy(-c, x.data(), z.data(), m);
    }
    return z;
}

double SpectralSolver::slope_constant() {
    if (slope_ready_) return slope_;
    const VelocityGrid& g = *op_->grid;
    std::vector<double> rhs(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) rhs[i] = g.xi1[i] * basis_.chi[1][i];
    auto re = to_even(rhs);
    auto z = deflated_solve(re);
    slope_ = simd::dot(re.data(), z.data(), re.size());
    slope_ready_ = true;
    return slope_;
}

EigenSolution SpectralSolver::solve_slow_branch(double u, const std::vector<double>* seed) const {
    const VelocityGrid& g = *op_->grid;
    const std::size_t m = even_.rep.size();
    std::vector<double> b(m);
    for (std::size_t r = 0; r < m; ++r) b[r] = g.xi1[even_.rep[r]] + u;

    Matrix J(3, 3);
    for (int a = 0; a < 3; ++a) {
        for (int c = 0; c < 3; ++c) {
            double s = 0.0;
            for (std::size_t r = 0; r < m; ++r) s += ker_even_[a][r] * b[r] * ker_even_[c][r];
            J(a, c) = s;
        }
    }
    LuFactor Jlu(J);

    std::vector<double> v = seed ? *seed : ker_even_[1];
    {
        double nrm = std::sqrt(simd::dot(v.data(), v.data(), m));
        for (auto& x : v) x /= nrm;
    }

    double tau = 0.0;
    double resid = 1e300;
    std::vector<double> bv(m), z(m), lv(m);
    for (int it = 0; it < 60; ++it) {
        for (std::size_t r = 0; r < m; ++r) bv[r] = b[r] * v[r];
        z = deflated_solve(bv);
        // kernel components restoring <x_a, B v_next> = 0
        std::array<double, 3> rhs3;
        for (int a = 0; a < 3; ++a) {
            double s = 0.0;
            for (std::size_t r = 0; r < m; ++r) s += ker_even_[a][r] * b[r] * z[r];
            rhs3[a] = -s;
        }
        std::array<double, 3> coef;
        Jlu.solve(rhs3.data(), coef.data());
        for (int a = 0; a < 3; ++a) simd::axpy(coef[a], ker_even_[a].data(), z.data(), m);
        double nrm = std::sqrt(simd::dot(z.data(), z.data(), m));
        for (auto& x : z) x /= nrm;
        if (simd::dot(z.data(), v.data(), m) < 0.0) {
            for (auto& x : z) x = -x;
        }
        v = z;
        simd::matvec(ltilde_even_.a.data(), m, m, v.data(), lv.data());
        double vBv = 0.0;
        for (std::size_t r = 0; r < m; ++r) vBv += v[r] * b[r] * v[r];
        double vLv = simd::dot(v.data(), lv.data(), m);
        if (std::fabs(vBv) < 1e-14) continue;
        tau = vLv / vBv;
        double rn = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
            double rr = lv[r] - tau * b[r] * v[r];
            rn += rr * rr;
        }
        resid = std::sqrt(rn) / std::sqrt(simd::dot(lv.data(), lv.data(), m) + 1e-300);
        if (resid < 1e-12 && it >= 3) break;
    }

    EigenSolution e;
    e.u = u;
    e.tau = tau;

    // normalization <(xi1+u) phi^2> = -u
    double s = 0.0;
    for (std::size_t r = 0; r < m; ++r) s += v[r] * b[r] * v[r];
    if (s * (-u) <= 0.0) {
        throw std::runtime_error(
            "eigenpair: normalization impossible, <(xi1+u) phi^2> and -u have opposite signs");
    }
    double scale = std::sqrt(-u / s);
    for (auto& x : v) x *= scale;

    e.phi = to_full(v);
    // sign convention <phi X+> >= 0
    if (qdot(g, e.phi, basis_.chi[0]) < 0.0) {
        for (auto& x : e.phi) x = -x;
    }
    double check = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        check += g.q[i] * (g.xi1[i] + u) * e.phi[i] * e.phi[i];
    }
    e.norm_residual = std::fabs(check + u);
    e.pencil_residual = resid;
    auto w = w_weight_table(g, weights_.theta);
    e.w_phi_sup = simd::sup_abs_w(w.data(), e.phi.data(), g.size());
    return e;
}

const EigenSolution& SpectralSolver::eigenpair_continued(double u) {
    auto it = cache_.find(key_of(u));
    if (it != cache_.end()) return it->second;

    // overlap continuation from small |u| upward
    const double sgn = u > 0.0 ? 1.0 : -1.0;
    const double target = std::fabs(u);
    std::vector<double> ladder;
    for (double s = 1e-3; s < target * 0.999; s *= 2.0) ladder.push_back(s);
    ladder.push_back(target);

    std::vector<double> seed;
    const std::vector<double>* seedp = nullptr;
    EigenSolution* last = nullptr;
    for (double step : ladder) {
        double uu = sgn * step;
        auto found = cache_.find(key_of(uu));
        if (found != cache_.end()) {
            last = &found->second;
            seed = to_even(last->phi);
            seedp = &seed;
            continue;
        }
        EigenSolution e = solve_slow_branch(uu, seedp);
        if (last != nullptr) {
            double num = qdot(*op_->grid, e.phi, last->phi);
            double den = std::sqrt(qdot(*op_->grid, e.phi, e.phi) *
                                   qdot(*op_->grid, last->phi, last->phi));
            double overlap = std::fabs(num) / den;
            if (overlap < 0.9) {
                throw std::runtime_error("eigenpair: branch lost during continuation (overlap " +
                                         std::to_string(overlap) + ")");
            }
        }
        auto [pos, ok] = cache_.emplace(key_of(uu), std::move(e));
        (void)ok;
        last = &pos->second;
        seed = to_even(last->phi);
        seedp = &seed;
    }
    return *last;
}

const EigenSolution& SpectralSolver::eigenpair(double u) {
    if (u == 0.0) throw std::invalid_argument("eigenpair: u must be nonzero");
    if (std::fabs(u) > r_max_) {
        throw std::invalid_argument("eigenpair: |u| exceeds the small-drift bound r = " +
                                    std::to_string(r_max_));
    }
    return eigenpair_continued(u);
}

const EigenSolution& SpectralSolver::eigenpair_with_psi(double u, double du) {
    {
        auto it = cache_.find(key_of(u));
        if (it != cache_.end() && it->second.has_psi && it->second.du == du) return it->second;
    }
    eigenpair(u);
    const EigenSolution ep = eigenpair(du);
    const EigenSolution em = eigenpair(-du);
    EigenSolution& e = cache_.find(key_of(u))->second;

    const VelocityGrid& g = *op_->grid;
    // orient the two small-drift eigenvectors along the branch through u
    double sp = qdot(g, e.phi, ep.phi) >= 0.0 ? 1.0 : -1.0;
    double sm = qdot(g, e.phi, em.phi) >= 0.0 ? 1.0 : -1.0;
    double num = 0.0, npp = 0.0, nmm = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        num += g.q[i] * sp * ep.phi[i] * sm * em.phi[i];
        npp += g.q[i] * ep.phi[i] * ep.phi[i];
        nmm += g.q[i] * em.phi[i] * em.phi[i];
    }
    e.overlap_pm = num / std::sqrt(npp * nmm);
    if (e.overlap_pm < 0.9) {
        throw std::runtime_error("compute_psi: +-du eigenvectors overlap " +
                                 std::to_string(e.overlap_pm) + " < 0.9, extrapolation diverged");
    }

    std::vector<double> rich(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) rich[i] = 0.5 * (sp * ep.phi[i] + sm * em.phi[i]);
    // The branch limit is a kernel mode; keep exactly its X0-aligned part so
    // the derived identities close to round-off.
    double chat = qdot(g, rich, basis_.chi[1]) / qdot(g, basis_.chi[1], basis_.chi[1]);
    e.phi0.assign(g.size(), 0.0);
    simd::axpy(chat, basis_.chi[1].data(), e.phi0.data(), g.size());
    double gap2 = 0.0, n0 = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        double d = rich[i] - e.phi0[i];
        gap2 += g.q[i] * d * d;
        n0 += g.q[i] * e.phi0[i] * e.phi0[i];
    }
    e.richardson_gap = std::sqrt(gap2 / (n0 + 1e-300));

    e.psi.resize(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) e.psi[i] = (e.phi[i] - e.phi0[i]) / u;
    e.du = du;
    auto w = w_weight_table(g, weights_.theta);
    e.w_psi_sup = simd::sup_abs_w(w.data(), e.psi.data(), g.size());
    e.has_psi = true;
    return e;
}

std::vector<double> SpectralSolver::p_u(const EigenSolution& e, const std::vector<double>& g) const {
    const VelocityGrid& gr = *op_->grid;
    double c = 0.0;
    for (std::size_t i = 0; i < gr.size(); ++i) {
        c += gr.q[i] * (gr.xi1[i] + e.u) * e.psi[i] * g[i];
    }
    std::vector<double> out(gr.size());
    for (std::size_t i = 0; i < gr.size(); ++i) out[i] = -c * e.phi[i];
    return out;
}

std::vector<double> SpectralSolver::P_u(const EigenSolution& e, const std::vector<double>& g) const {
    const VelocityGrid& gr = *op_->grid;
    double c = qdot(gr, e.psi, g);
    std::vector<double> out(gr.size());
    for (std::size_t i = 0; i < gr.size(); ++i) out[i] = -c * (gr.xi1[i] + e.u) * e.phi[i];
    return out;
}

AdmissibilityData build_admissibility(SpectralSolver& solver, double u, double gamma, double alpha,
                                      double beta) {
    if (alpha < 0.0) alpha = 2.0 * gamma;
    if (beta < 0.0) beta = 2.0 * gamma;
    const EigenSolution& e = solver.eigenpair_with_psi(u);
    const VelocityGrid& g = solver.grid();
    const InvariantBasis& basis = solver.basis();

    AdmissibilityData adm;
    adm.u = u;
    adm.alpha = alpha;
    adm.beta = beta;
    adm.gamma = gamma;

    auto dot = [&](const std::vector<double>& a, const std::vector<double>& b) {
        return simd::dot3(g.q.data(), a.data(), b.data(), g.size());
    };
    const auto& xp = basis.chi[0];
    const auto& x0 = basis.chi[1];
    double gpp = dot(xp, xp);
    double g0p = dot(x0, xp);
    double psi_xp = dot(e.psi, xp);
    double phi_x0 = dot(e.phi, x0);
    double phi_xp = dot(e.phi, xp);
    double psi_phi = dot(e.psi, e.phi);
    double chat = dot(e.phi0, x0) / dot(x0, x0);

    // Coupling matrix of the moments (<B X+ g>, <B X0 g>, <B psi g>) under
    // the penalized dynamics; the entries are the measured moments, so the
    // moment system is exact for the discrete operator.
    adm.A = Matrix(3, 3);
    adm.A(0, 0) = alpha * gpp;
    adm.A(0, 1) = 0.0;
    adm.A(0, 2) = -beta * phi_xp;
    adm.A(1, 0) = alpha * g0p;
    adm.A(1, 1) = 0.0;
    adm.A(1, 2) = -beta * phi_x0;
    adm.A(2, 0) = alpha * psi_xp;
    adm.A(2, 1) = e.tau * chat / u;
    adm.A(2, 2) = e.tau - beta * psi_phi;

    auto eig = eigenvalues_small(adm.A);
    adm.mu = {eig[0], eig[1], eig[2]};
    adm.eig_margin = 1e300;
    for (int a = 0; a < 3; ++a) {
        for (int b2 = a + 1; b2 < 3; ++b2) {
            adm.eig_margin = std::min(adm.eig_margin, std::abs(eig[a] - eig[b2]));
        }
    }
    if (adm.eig_margin < 1e-12) {
        throw std::runtime_error("build_admissibility: repeated eigenvalues of the coupling matrix");
    }

    // The moments obey m' = (gamma I - A) m; bounded solutions carry no
    // growing mode, so the boundary conditions must remove the two modes
    // with Re(gamma - mu) < 0.
    std::vector<int> decaying;
    for (int a = 0; a < 3; ++a) {
        if (gamma - adm.mu[a].real() < 0.0) decaying.push_back(a);
    }
    if (decaying.size() != 2) {
        throw std::runtime_error("build_admissibility: expected 2 decaying moment modes, found " +
                                 std::to_string(decaying.size()));
    }
    for (int idx : decaying) {
        if (std::fabs(adm.mu[idx].imag()) > 1e-10 * (1.0 + std::fabs(adm.mu[idx].real()))) {
            throw std::runtime_error("build_admissibility: selected mode is not real");
        }
    }

    Matrix At(3, 3);
    for (int a = 0; a < 3; ++a) {
        for (int b2 = 0; b2 < 3; ++b2) At(a, b2) = adm.A(b2, a);
    }
    auto lv1 = eigenvector_small(At, adm.mu[decaying[0]].real());
    auto lv2 = eigenvector_small(At, adm.mu[decaying[1]].real(), 99991);
    for (int a = 0; a < 3; ++a) {
        adm.l1[a] = lv1[a];
        adm.l2[a] = lv2[a];
    }
    adm.mode_rates = {gamma - adm.mu[decaying[0]].real(), gamma - adm.mu[decaying[1]].real()};

    adm.Y1.resize(g.size());
    adm.Y2.resize(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        adm.Y1[i] = adm.l1[0] * xp[i] + adm.l1[1] * x0[i] + adm.l1[2] * e.psi[i];
        adm.Y2[i] = adm.l2[0] * xp[i] + adm.l2[1] * x0[i] + adm.l2[2] * e.psi[i];
    }
    return adm;
}

std::array<double, 2> admissibility_residual(const VelocityGrid& grid, double u,
                                             const AdmissibilityData& adm,
                                             const std::vector<double>& g0) {
    std::array<double, 2> r{0.0, 0.0};
    for (std::size_t i = 0; i < grid.size(); ++i) {
        double w = grid.q[i] * (grid.xi1[i] + u) * g0[i];
        r[0] += w * adm.Y1[i];
        r[1] += w * adm.Y2[i];
    }
    return r;
}

}  // namespace kbl
