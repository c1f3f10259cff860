#include "kbl/transport.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "kbl/numerics.hpp"
#include "kbl/simd.hpp"

namespace kbl {

namespace {

constexpr double kGrazingGuard = 1e-12;

// c0(z) = (1 - e^-z)/z, c1(z) = (1 - e^-z (1+z))/z^2, stable for small z.
inline void exp_coeffs(double z, double& E, double& c0, double& c1) {
    E = std::exp(-z);
    if (z > 1e-3) {
        c0 = -std::expm1(-z) / z;
        c1 = (1.0 - E * (1.0 + z)) / (z * z);
    } else {
        c0 = 1.0 - z / 2.0 + z * z / 6.0 - z * z * z / 24.0;
        c1 = 0.5 - z / 3.0 + z * z / 8.0 - z * z * z / 30.0;
    }
}

}  // namespace

void PenalizedConfig::validate(double nu0) const {
    if (gamma <= 0.0) throw std::invalid_argument("pen: gamma must be positive");
    if (!(gamma0 < gamma) || gamma0 <= 0.0) {
        throw std::invalid_argument("pen: need 0 < gamma0 < gamma");
    }
    double t = horizon(nu0);
    if (t * t * gamma >= 1.0) {
        throw std::invalid_argument("pen: t^2 gamma = " + std::to_string(t * t * gamma) +
                                    " must stay well below 1; lower gamma or the horizon");
    }
    if (tol_lin <= 0.0 || tol_nl <= 0.0) throw std::invalid_argument("pen: tolerances must be positive");
    if (accel != "anderson" && accel != "plain") {
        throw std::invalid_argument("pen: accel must be 'anderson' or 'plain'");
    }
    if (sweep_order != "symmetric" && sweep_order != "jacobi") {
        throw std::invalid_argument("pen: sweep_order must be 'symmetric' or 'jacobi'");
    }
}

std::vector<double> BoundaryFamily::assemble(double a1, double a2) const {
    std::vector<double> out(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
        out[i] = eps * (base[i] + a1 * bump1[i] + a2 * bump2[i]);
    }
    return out;
}

double BoundaryFamily::w_sup(double a1, double a2, double theta) const {
    auto fb = assemble(a1, a2);
    auto w = w_weight_table(*grid, theta);
    return simd::sup_abs_w(w.data(), fb.data(), fb.size());
}

BoundaryFamily BoundaryFamily::pure_gaussian(const VelocityGrid& grid, double eps) {
    BoundaryFamily f;
    f.grid = &grid;
    f.eps = eps;
    f.base.resize(grid.size());
    f.bump1.assign(grid.size(), 0.0);
    f.bump2.assign(grid.size(), 0.0);
    for (std::size_t i = 0; i < grid.size(); ++i) f.base[i] = std::exp(-grid.speed2(i));
    return f;
}

BoundaryFamily BoundaryFamily::tunable(const VelocityGrid& grid, double eps, double u,
                                       double theta) {
    BoundaryFamily f;
    f.grid = &grid;
    f.eps = eps;
    f.box = 1.3;
    f.base.resize(grid.size());
    f.bump1.resize(grid.size());
    f.bump2.resize(grid.size());
    auto ramp = [&](double b) {
        if (b <= 0.0) return 0.0;
        double r = std::min(1.0, 2.0 * b);
        return r * r;
    };
    auto w = w_weight_table(grid, theta);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        double b = grid.xi1[i] + u;
        double perp = grid.xi2[i] * grid.xi2[i] + grid.xi3[i] * grid.xi3[i];
        f.base[i] = 0.25 * std::exp(-grid.speed2(i));
        double g1 = std::exp(-((grid.xi1[i] - 1.0) * (grid.xi1[i] - 1.0) + perp) / 0.64);
        double g2 = std::exp(-((grid.xi1[i] - 2.5) * (grid.xi1[i] - 2.5) + perp) / 0.64);
        f.bump1[i] = ramp(b) * g1;
        f.bump2[i] = ramp(b) * g2;
    }
    // normalize so the weighted sup of each bump is a fixed fraction of the
    // base amplitude; the whole admissible box then keeps |w f_b| <= eps
    double s1 = simd::sup_abs_w(w.data(), f.bump1.data(), grid.size());
    double s2 = simd::sup_abs_w(w.data(), f.bump2.data(), grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        f.bump1[i] *= 0.28 / s1;
        f.bump2[i] *= 0.28 / s2;
    }
    return f;
}

CoarseCorrector::CoarseCorrector(const TransportContext& ctx) : ctx_(&ctx) {
    const VelocityGrid& grid = ctx.grid();
    const SpatialGrid& xg = ctx.xgrid();
    const std::size_t nv = grid.size();
    const std::size_t nx = xg.size();
    if (nv > 1024) return;  // dense blocks grow as nv^2; large grids iterate without correction

    // Coarse stations must resolve every mode the sweeps relax slowly: the
    // fast penalty modes (scale of a few mean free paths) near the boundary
    // and the gamma-scale tail further out.  Target spacing x/4, but never
    // more than three fine cells.
    std::vector<std::size_t> pick;
    pick.push_back(0);
    while (pick.back() < nx - 1) {
        std::size_t j = pick.back();
        double gap_target = std::max(0.4, xg.x[j] / 4.0);
        std::size_t next = j + 1;
        while (next < nx - 1 && next - j < 3 && xg.x[next] - xg.x[j] < gap_target) ++next;
        pick.push_back(next);
    }
    cs_ = pick;
    const std::size_t m = cs_.size();
    if (m < 3) return;

    // dense compact part
    kp_ = Matrix(nv, nv);
    {
        std::vector<double> e(nv, 0.0);
        for (std::size_t k = 0; k < nv; ++k) {
            e[k] = 1.0;
            auto col = ctx.apply_Kp(e);
            e[k] = 0.0;
            for (std::size_t i = 0; i < nv; ++i) kp_(i, k) = col[i];
        }
    }

    cc_.resize(m - 1);
    const auto& nb = ctx.nu_bar();
    for (std::size_t c = 0; c + 1 < m; ++c) {
        double dx = xg.x[cs_[c + 1]] - xg.x[cs_[c]];
        cc_[c].E.resize(nv);
        cc_[c].A.resize(nv);
        cc_[c].B.resize(nv);
        for (std::size_t i = 0; i < nv; ++i) {
            double b = grid.xi1[i] + ctx.config().u;
            double ab = std::fabs(b);
            if (ab <= kGrazingGuard) continue;
            double z = nb[i] * dx / ab;
            double E, c0, c1;
            exp_coeffs(z, E, c0, c1);
            cc_[c].E[i] = E;
            cc_[c].A[i] = dx / ab * (c0 - c1);
            cc_[c].B[i] = dx / ab * c1;
        }
    }

    // block Thomas factorization; W = Dtilde^{-1} U is transient per step
    dlu_.resize(m);
    Matrix D(nv, nv), U(nv, nv), W(nv, nv);
    bool have_w = false;
    std::vector<double> row(nv);
    for (std::size_t j = 0; j < m; ++j) {
        fill_D(j, D);
        if (j > 0 && have_w) {
            // D_j -= L_j W
            parallel_for(nv, ctx_->config().threads, [&](std::size_t lo, std::size_t hi) {
                std::vector<double> lrow(nv);
                std::vector<double> prod(nv);
                for (std::size_t i = lo; i < hi; ++i) {
                    double b = ctx_->grid().xi1[i] + ctx_->config().u;
                    if (b <= kGrazingGuard) continue;  // L rows exist only for right-movers
                    fill_L_row(j, i, lrow);
                    for (std::size_t cI = 0; cI < nv; ++cI) prod[cI] = 0.0;
                    for (std::size_t k = 0; k < nv; ++k) {
                        if (lrow[k] != 0.0) simd::axpy(lrow[k], W.row(k), prod.data(), nv);
                    }
                    double* drow = D.row(i);
                    for (std::size_t cI = 0; cI < nv; ++cI) drow[cI] -= prod[cI];
                }
            });
        }
        dlu_[j] = std::make_unique<LuFactor>(D);
        if (j + 1 < m) {
            for (std::size_t i = 0; i < nv; ++i) {
                fill_U_row(j, i, row);
                std::copy(row.begin(), row.end(), U.row(i));
            }
            parallel_for(nv, ctx_->config().threads, [&](std::size_t lo, std::size_t hi) {
                std::vector<double> col(nv), sol(nv);
                for (std::size_t cI = lo; cI < hi; ++cI) {
                    for (std::size_t i = 0; i < nv; ++i) col[i] = U(i, cI);
                    dlu_[j]->solve(col.data(), sol.data());
                    for (std::size_t i = 0; i < nv; ++i) W(i, cI) = sol[i];
                }
            });
            have_w = true;
        }
    }
    ready_ = true;
}

// Diagonal block of station j.
void CoarseCorrector::fill_D(std::size_t j, Matrix& D) const {
    const VelocityGrid& grid = ctx_->grid();
    const std::size_t nv = grid.size();
    const std::size_t m = cs_.size();
    std::fill(D.a.begin(), D.a.end(), 0.0);
    for (std::size_t i = 0; i < nv; ++i) {
        double b = grid.xi1[i] + ctx_->config().u;
        double* row = D.row(i);
        if (b > kGrazingGuard) {
            if (j == 0) {
                row[i] = 1.0;  // boundary row
            } else {
                double A = cc_[j - 1].A[i];
                for (std::size_t k = 0; k < nv; ++k) row[k] = -A * kp_(i, k);
                row[i] += 1.0;
            }
        } else if (b < -kGrazingGuard) {
            if (j == m - 1) {
                row[i] = 1.0;  // far closure row
            } else {
                double A = cc_[j].A[i];
                for (std::size_t k = 0; k < nv; ++k) row[k] = -A * kp_(i, k);
                row[i] += 1.0;
            }
        } else {
            double nb = ctx_->nu_bar()[i];
            for (std::size_t k = 0; k < nv; ++k) row[k] = -kp_(i, k) / nb;
            row[i] += 1.0;
        }
    }
}

void CoarseCorrector::fill_L_row(std::size_t j, std::size_t i, std::vector<double>& row) const {
    // right-mover equation at station j, coupling to station j-1
    const std::size_t nv = row.size();
    double B = cc_[j - 1].B[i];
    for (std::size_t k = 0; k < nv; ++k) row[k] = -B * kp_(i, k);
    row[i] -= cc_[j - 1].E[i];
}

void CoarseCorrector::fill_U_row(std::size_t j, std::size_t i, std::vector<double>& row) const {
    const VelocityGrid& grid = ctx_->grid();
    const std::size_t nv = row.size();
    std::fill(row.begin(), row.end(), 0.0);
    double b = grid.xi1[i] + ctx_->config().u;
    if (b >= -kGrazingGuard) return;  // U rows exist only for left-movers
    double B = cc_[j].B[i];
    for (std::size_t k = 0; k < nv; ++k) row[k] = -B * kp_(i, k);
    row[i] -= cc_[j].E[i];
}

// Composed residual of the fine per-cell relations over each coarse cell.
std::vector<double> CoarseCorrector::restrict_residual(const Field& g, const Field& Q,
                                                       const std::vector<double>& g_b) const {
    const VelocityGrid& grid = ctx_->grid();
    const SpatialGrid& xg = ctx_->xgrid();
    const std::size_t nv = grid.size();
    const std::size_t nx = xg.size();
    const std::size_t m = cs_.size();
    const auto& nb = ctx_->nu_bar();
    const double u = ctx_->config().u;

    // fine sources
    Field S(nx, nv);
    parallel_for(nx, ctx_->config().threads, [&](std::size_t lo, std::size_t hi) {
        std::vector<double> gj(nv);
        for (std::size_t j = lo; j < hi; ++j) {
            gj.assign(g.station(j), g.station(j) + nv);
            auto kp = ctx_->apply_Kp(gj);
            double* s = S.station(j);
            const double* q = Q.station(j);
            for (std::size_t i = 0; i < nv; ++i) s[i] = kp[i] + q[i];
        }
    });

    std::vector<double> r(m * nv, 0.0);
    for (std::size_t i = 0; i < nv; ++i) {
        double b = grid.xi1[i] + u;
        if (b > kGrazingGuard) {
            r[0 * nv + i] = g_b[i] - g.at(0, i);
            std::size_t c = 1;
            double acc = 0.0;
            for (std::size_t j = 1; j < nx; ++j) {
                double dx = xg.dx(j - 1);
                double z = nb[i] * dx / b;
                double E, c0, c1;
                exp_coeffs(z, E, c0, c1);
                double I = dx * (S.at(j, i) * c0 - (S.at(j, i) - S.at(j - 1, i)) * c1);
                double rj = E * g.at(j - 1, i) + I / b - g.at(j, i);
                acc = E * acc + rj;
                if (j == cs_[c]) {
                    r[c * nv + i] = acc;
                    acc = 0.0;
                    ++c;
                    if (c >= m) break;
                }
            }
        } else if (b < -kGrazingGuard) {
            double ab = -b;
            r[(m - 1) * nv + i] = 0.0 - g.at(nx - 1, i);
            std::size_t c = m - 2;
            double acc = 0.0;
            for (std::size_t j = nx - 1; j-- > 0;) {
                double dx = xg.dx(j);
                double z = nb[i] * dx / ab;
                double E, c0, c1;
                exp_coeffs(z, E, c0, c1);
                double I = dx * (S.at(j, i) * c0 - (S.at(j, i) - S.at(j + 1, i)) * c1);
                double rj = E * g.at(j + 1, i) + I / ab - g.at(j, i);
                acc = E * acc + rj;
                if (j == cs_[c]) {
                    r[c * nv + i] = acc;
                    acc = 0.0;
                    if (c == 0) break;
                    --c;
                }
            }
        } else {
            for (std::size_t c = 0; c < m; ++c) {
                std::size_t j = cs_[c];
                r[c * nv + i] = S.at(j, i) / nb[i] - g.at(j, i);
            }
        }
    }
    return r;
}

void CoarseCorrector::correct(Field& g, const Field& Q, const std::vector<double>& g_b) const {
    if (!ready_) return;
    const std::size_t nv = ctx_->grid().size();
    const std::size_t m = cs_.size();
    std::vector<double> r = restrict_residual(g, Q, g_b);

    // block Thomas solve: forward
    std::vector<std::vector<double>> y(m, std::vector<double>(nv));
    std::copy(r.begin(), r.begin() + nv, y[0].begin());
    std::vector<double> z(nv), lrow(nv);
    for (std::size_t j = 1; j < m; ++j) {
        dlu_[j - 1]->solve(y[j - 1].data(), z.data());
        auto kz = std::vector<double>(nv);
        simd::matvec(kp_.a.data(), nv, nv, z.data(), kz.data());
        for (std::size_t i = 0; i < nv; ++i) {
            double b = ctx_->grid().xi1[i] + ctx_->config().u;
            double lz = 0.0;
            if (b > kGrazingGuard && j >= 1) {
                lz = -cc_[j - 1].E[i] * z[i] - cc_[j - 1].B[i] * kz[i];
            }
            y[j][i] = r[j * nv + i] - lz;
        }
    }
    // back substitution: delta_j = Dtilde_j^{-1}(y_j - U_j delta_{j+1})
    std::vector<std::vector<double>> delta(m, std::vector<double>(nv));
    dlu_[m - 1]->solve(y[m - 1].data(), delta[m - 1].data());
    std::vector<double> rhs(nv), kd(nv);
    for (std::size_t j = m - 1; j-- > 0;) {
        simd::matvec(kp_.a.data(), nv, nv, delta[j + 1].data(), kd.data());
        for (std::size_t i = 0; i < nv; ++i) {
            double b = ctx_->grid().xi1[i] + ctx_->config().u;
            double ud = 0.0;
            if (b < -kGrazingGuard && j + 1 < m) {
                ud = -cc_[j].E[i] * delta[j + 1][i] - cc_[j].B[i] * kd[i];
            }
            rhs[i] = y[j][i] - ud;
        }
        dlu_[j]->solve(rhs.data(), delta[j].data());
    }

    // prolong linearly in x and apply
    const SpatialGrid& xg = ctx_->xgrid();
    std::size_t c = 0;
    for (std::size_t j = 0; j < xg.size(); ++j) {
        while (c + 1 < m && cs_[c + 1] <= j) ++c;
        double* gj = g.station(j);
        if (j == cs_[c]) {
            for (std::size_t i = 0; i < nv; ++i) gj[i] += delta[c][i];
        } else {
            double x0 = xg.x[cs_[c]], x1 = xg.x[cs_[c + 1]];
            double t = (xg.x[j] - x0) / (x1 - x0);
            for (std::size_t i = 0; i < nv; ++i) {
                gj[i] += (1.0 - t) * delta[c][i] + t * delta[c + 1][i];
            }
        }
    }
}

TransportContext::~TransportContext() = default;

const CoarseCorrector* TransportContext::coarse() const {
    if (!coarse_) coarse_ = std::make_unique<CoarseCorrector>(*this);
    return coarse_->ready() ? coarse_.get() : nullptr;
}

TransportContext::TransportContext(const SpatialGrid& xgrid, SpectralSolver& spectral,
                                   const GammaEvaluator& gamma, PenalizedConfig cfg)
    : xgrid_(&xgrid), spectral_(&spectral), gamma_(&gamma), cfg_(cfg) {
    const CollisionOperator& op = spectral.collision();
    cfg_.validate(op.nu0);
    const VelocityGrid& g = spectral.grid();
    g.check_grazing(cfg_.u);
    eigen_ = &spectral.eigenpair_with_psi(cfg_.u);

    nu_bar_.resize(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        nu_bar_[i] = op.nu[i] - cfg_.gamma * (g.xi1[i] + cfg_.u);
        if (nu_bar_[i] < 0.5 * op.nu[i] - 1e-12) {
            throw std::invalid_argument("pen: gamma too large, damped frequency below nu/2");
        }
        if (nu_bar_[i] <= 0.0) throw std::invalid_argument("pen: gamma too large, nu_bar <= 0");
    }
    wtab_ = w_weight_table(g, spectral.weights().theta);
    wttab_ = w_weight_table(g, spectral.weights().theta_tilde);
}

double TransportContext::w_sup_field(const Field& f) const {
    double m = 0.0;
    for (std::size_t j = 0; j < f.nx; ++j) {
        m = std::max(m, simd::sup_abs_w(wtab_.data(), f.station(j), f.nv));
    }
    return m;
}

std::vector<double> TransportContext::gamma_tilde(const std::vector<double>& f, bool even_inputs) const {
    std::vector<double> out = gamma_->evaluate(f, f, cfg_.threads, even_inputs);
    const VelocityGrid& g = grid();
    // the form of reflection-even arguments is even; symmetrizing removes
    // angular-rule noise without changing the represented integral
    if (even_inputs) symmetrize_reflection_inplace(g, out);
    // conservation correction: the quadrature's defect against the five
    // collision invariants is projected out, matching the projected operator
    const auto& basis = spectral_->basis();
    for (int a = 0; a < 5; ++a) {
        double c = simd::dot3(g.q.data(), out.data(), basis.ortho[a].data(), g.size());
        simd::axpy(-c, basis.ortho[a].data(), out.data(), g.size());
    }
    return out;
}

std::vector<double> TransportContext::apply_Kp(const std::vector<double>& gvec) const {
    const VelocityGrid& g = grid();
    std::vector<double> out = spectral_->apply_Ktilde(gvec);
    // - alpha P+((xi1+u) g)
    double c = 0.0;
    const auto& xp = spectral_->basis().chi[0];
    for (std::size_t i = 0; i < g.size(); ++i) {
        c += g.q[i] * (g.xi1[i] + cfg_.u) * gvec[i] * xp[i];
    }
    simd::axpy(-cfg_.alpha_eff() * c, xp.data(), out.data(), out.size());
    // - beta p_u g
    double cp = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        cp += g.q[i] * (g.xi1[i] + cfg_.u) * eigen_->psi[i] * gvec[i];
    }
    simd::axpy(cfg_.beta_eff() * cp, eigen_->phi.data(), out.data(), out.size());
    return out;
}

Field transport_sweep(const VelocityGrid& grid, const SpatialGrid& xgrid,
                      const std::vector<double>& nu_bar, double u, const Field& Q,
                      const std::vector<double>& g_b, const std::vector<double>* g_far,
                      int threads) {
    const std::size_t nx = xgrid.size();
    const std::size_t nv = grid.size();
    if (Q.nx != nx || Q.nv != nv) throw std::invalid_argument("transport_sweep: field shape mismatch");
    for (double nb : nu_bar) {
        if (nb <= 0.0) throw std::invalid_argument("transport_sweep: nu_bar must be positive (gamma too large)");
    }
    Field g(nx, nv);
    parallel_for(nv, threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const double b = grid.xi1[i] + u;
            const double nb = nu_bar[i];
            if (b > kGrazingGuard) {
                g.at(0, i) = g_b[i];
                for (std::size_t j = 0; j + 1 < nx; ++j) {
                    double dx = xgrid.dx(j);
                    double z = nb * dx / b;
                    double E, c0, c1;
                    exp_coeffs(z, E, c0, c1);
                    double qa = Q.at(j, i), qb = Q.at(j + 1, i);
                    double I = dx * (qb * c0 - (qb - qa) * c1);
                    g.at(j + 1, i) = E * g.at(j, i) + I / b;
                }
            } else if (b < -kGrazingGuard) {
                const double ab = -b;
                g.at(nx - 1, i) = g_far ? (*g_far)[i] : 0.0;
                for (std::size_t j = nx - 1; j-- > 0;) {
                    double dx = xgrid.dx(j);
                    double z = nb * dx / ab;
                    double E, c0, c1;
                    exp_coeffs(z, E, c0, c1);
                    double qa = Q.at(j, i), qb = Q.at(j + 1, i);
                    double I = dx * (qa * c0 - (qa - qb) * c1);
                    g.at(j, i) = E * g.at(j + 1, i) + I / ab;
                }
            } else {
                // grazing channel: the equation degenerates to nu_bar g = Q
                for (std::size_t j = 0; j < nx; ++j) g.at(j, i) = Q.at(j, i) / nb;
            }
        }
    });
    return g;
}

namespace {

// one application of the fixed-point map: g -> sweep(Kp g + Q)
Field penalized_map(const TransportContext& ctx, const Field& gcur, const Field& Q,
                    const std::vector<double>& g_b) {
    const std::size_t nx = gcur.nx, nv = gcur.nv;
    Field src(nx, nv);
    parallel_for(nx, ctx.config().threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t j = lo; j < hi; ++j) {
            std::vector<double> gj(gcur.station(j), gcur.station(j) + nv);
            auto kp = ctx.apply_Kp(gj);
            double* s = src.station(j);
            const double* q = Q.station(j);
            for (std::size_t i = 0; i < nv; ++i) s[i] = kp[i] + q[i];
        }
    });
    return transport_sweep(ctx.grid(), ctx.xgrid(), ctx.nu_bar(), ctx.config().u, src, g_b, nullptr,
                           ctx.config().threads);
}

// Symmetric space-marching application of the same fixed point: the
// collision source is refreshed station by station along the march, so
// multi-collision information crosses the whole slab in one up-down cycle
// instead of one cell per iteration (the diffusive crawl of the fully
// lagged source).
void penalized_cycle_inplace(const TransportContext& ctx, Field& g, const Field& Q,
                             const std::vector<double>& g_b) {
    const VelocityGrid& grid = ctx.grid();
    const SpatialGrid& xg = ctx.xgrid();
    const PenalizedConfig& cfg = ctx.config();
    const std::size_t nx = g.nx, nv = g.nv;
    const auto& nu_bar = ctx.nu_bar();

    std::vector<double> s_prev(nv), s_cur(nv), gj(nv);
    auto source_at = [&](std::size_t j, std::vector<double>& out) {
        gj.assign(g.station(j), g.station(j) + nv);
        out = ctx.apply_Kp(gj);
        const double* q = Q.station(j);
        for (std::size_t i = 0; i < nv; ++i) out[i] += q[i];
    };

    // upward pass: right-moving channels, inflow at x = 0
    for (std::size_t i = 0; i < nv; ++i) {
        double b = grid.xi1[i] + cfg.u;
        if (b > kGrazingGuard) g.at(0, i) = g_b[i];
    }
    source_at(0, s_prev);
    for (std::size_t j = 1; j < nx; ++j) {
        source_at(j, s_cur);
        double dx = xg.dx(j - 1);
        for (std::size_t i = 0; i < nv; ++i) {
            double b = grid.xi1[i] + cfg.u;
            if (b > kGrazingGuard) {
                double z = nu_bar[i] * dx / b;
                double E, c0, c1;
                exp_coeffs(z, E, c0, c1);
                double I = dx * (s_cur[i] * c0 - (s_cur[i] - s_prev[i]) * c1);
                g.at(j, i) = E * g.at(j - 1, i) + I / b;
            } else if (std::fabs(b) <= kGrazingGuard) {
                g.at(j, i) = s_cur[i] / nu_bar[i];
            }
        }
        source_at(j, s_prev);  // refresh with the updated right-moving channels
    }
    // downward pass: left-moving channels, zero inflow at the far closure
    for (std::size_t i = 0; i < nv; ++i) {
        double b = grid.xi1[i] + cfg.u;
        if (b < -kGrazingGuard) g.at(nx - 1, i) = 0.0;
    }
    source_at(nx - 1, s_prev);
    for (std::size_t j = nx - 1; j-- > 0;) {
        source_at(j, s_cur);
        double dx = xg.dx(j);
        for (std::size_t i = 0; i < nv; ++i) {
            double b = grid.xi1[i] + cfg.u;
            if (b < -kGrazingGuard) {
                double ab = -b;
                double z = nu_bar[i] * dx / ab;
                double E, c0, c1;
                exp_coeffs(z, E, c0, c1);
                double I = dx * (s_cur[i] * c0 - (s_cur[i] - s_prev[i]) * c1);
                g.at(j, i) = E * g.at(j + 1, i) + I / ab;
            } else if (std::fabs(b) <= kGrazingGuard) {
                g.at(j, i) = s_cur[i] / nu_bar[i];
            }
        }
        source_at(j, s_prev);
    }
    // grazing handled in both passes; boundary values of the outgoing
    // channels at x=0 come from the downward pass itself
}

double w_sup_diff(const TransportContext& ctx, const Field& a, const Field& b) {
    const auto& w = ctx.w_table();
    double m = 0.0;
    for (std::size_t j = 0; j < a.nx; ++j) {
        const double* pa = a.station(j);
        const double* pb = b.station(j);
        for (std::size_t i = 0; i < a.nv; ++i) {
            double v = std::fabs(w[i] * (pa[i] - pb[i]));
            if (v > m) m = v;
        }
    }
    return m;
}

LinearSolveResult iterate_source(const TransportContext& ctx, const Field& Q,
                                 const std::vector<double>& g_b, double lambda,
                                 const Field* warm_start) {
    const PenalizedConfig& cfg = ctx.config();
    LinearSolveResult res;
    Field g = (warm_start != nullptr && warm_start->nx == Q.nx && warm_start->nv == Q.nv)
                  ? *warm_start
                  : transport_sweep(ctx.grid(), ctx.xgrid(), ctx.nu_bar(), cfg.u, Q, g_b, nullptr,
                                    cfg.threads);

    const bool anderson = cfg.accel == "anderson";
    const int depth = std::max(1, cfg.anderson_depth);
    std::vector<std::vector<double>> dG, dR;  // difference history
    std::vector<double> g_prev_flat, r_prev_flat;

    const CoarseCorrector* coarse = (lambda == 1.0) ? ctx.coarse() : nullptr;
    double prev_update = 0.0;
    for (int it = 1; it <= cfg.max_iter_lin; ++it) {
        Field gmap;
        if (cfg.sweep_order == "jacobi") {
            gmap = penalized_map(ctx, g, Q, g_b);
        } else {
            gmap = g;
            penalized_cycle_inplace(ctx, gmap, Q, g_b);
        }
        if (coarse != nullptr) coarse->correct(gmap, Q, g_b);
        if (lambda != 1.0) {
            // homotopy in the compact part: blend with the pure sweep
            Field base = transport_sweep(ctx.grid(), ctx.xgrid(), ctx.nu_bar(), cfg.u, Q, g_b,
                                         nullptr, cfg.threads);
            for (std::size_t k = 0; k < gmap.data.size(); ++k) {
                gmap.data[k] = lambda * gmap.data[k] + (1.0 - lambda) * base.data[k];
            }
        }
        double update = w_sup_diff(ctx, gmap, g);
        IterationRecord rec;
        rec.iter = it;
        rec.update = update;
        rec.ratio = prev_update > 0.0 ? update / prev_update : 0.0;
        res.history.push_back(rec);
        prev_update = update;

        if (!anderson) {
            g = std::move(gmap);
        } else {
            // Anderson mixing on the flattened iterates
            const std::size_t nfl = g.data.size();
            std::vector<double> r(nfl);
            for (std::size_t k = 0; k < nfl; ++k) r[k] = gmap.data[k] - g.data[k];
            if (!g_prev_flat.empty()) {
                std::vector<double> dg(nfl), dr(nfl);
                for (std::size_t k = 0; k < nfl; ++k) {
                    dg[k] = g.data[k] - g_prev_flat[k];
                    dr[k] = r[k] - r_prev_flat[k];
                }
                dG.push_back(std::move(dg));
                dR.push_back(std::move(dr));
                if (static_cast<int>(dG.size()) > depth) {
                    dG.erase(dG.begin());
                    dR.erase(dR.begin());
                }
            }
            g_prev_flat = g.data;
            r_prev_flat = r;
            const std::size_t mm = dR.size();
            std::vector<double> theta(mm, 0.0);
            if (mm > 0) {
                Matrix gram(mm, mm);
                std::vector<double> rhs(mm);
                for (std::size_t a = 0; a < mm; ++a) {
                    for (std::size_t b2 = 0; b2 <= a; ++b2) {
                        double v = simd::dot(dR[a].data(), dR[b2].data(), nfl);
                        gram(a, b2) = v;
                        gram(b2, a) = v;
                    }
                    rhs[a] = simd::dot(dR[a].data(), r.data(), nfl);
                    gram(a, a) *= 1.0 + 1e-12;
                }
                try {
                    LuFactor lu(std::move(gram));
                    theta = lu.solve(rhs);
                } catch (const std::exception&) {
                    std::fill(theta.begin(), theta.end(), 0.0);
                }
            }
            for (std::size_t k = 0; k < nfl; ++k) g.data[k] = g.data[k] + r[k];
            for (std::size_t a = 0; a < mm; ++a) {
                simd::axpy(-theta[a], dG[a].data(), g.data.data(), nfl);
                simd::axpy(-theta[a], dR[a].data(), g.data.data(), nfl);
            }
        }

        res.iterations = it;
        if (update < cfg.tol_lin) {
            res.converged = true;
            break;
        }
    }
    Field gmap = penalized_map(ctx, g, Q, g_b);
    res.fixed_point_residual = w_sup_diff(ctx, gmap, g);
    res.final_update = prev_update;
    res.g = std::move(gmap);  // one extra map application tightens the result
    res.lambda_used = lambda;
    return res;
}

}  // namespace

Field penalized_iteration(const TransportContext& ctx, const Field& g, const Field& Q,
                          const std::vector<double>& g_b, const std::string& order) {
    if (order == "jacobi") return penalized_map(ctx, g, Q, g_b);
    Field out = g;
    penalized_cycle_inplace(ctx, out, Q, g_b);
    return out;
}

LinearSolveResult solve_linear_penalized(const TransportContext& ctx, const Field& Q,
                                         const std::vector<double>& g_b, const Field* warm_start) {
    LinearSolveResult res = iterate_source(ctx, Q, g_b, 1.0, warm_start);
    if (res.converged) return res;
    const PenalizedConfig& cfg = ctx.config();
    if (cfg.lambda_steps > 0) {
        // homotopy restart in the compact-part coefficient
        for (int s = 1; s <= cfg.lambda_steps; ++s) {
            double lambda = static_cast<double>(s) / cfg.lambda_steps;
            res = iterate_source(ctx, Q, g_b, lambda, nullptr);
            if (!res.converged) break;
        }
        if (res.converged) return res;
    }
    std::string msg = "solve_linear_penalized: no convergence in " +
                      std::to_string(cfg.max_iter_lin) + " iterations; last updates:";
    std::size_t from = res.history.size() > 5 ? res.history.size() - 5 : 0;
    for (std::size_t k = from; k < res.history.size(); ++k) {
        msg += " " + std::to_string(res.history[k].update);
    }
    throw std::runtime_error(msg);
}

std::vector<double> compute_h(const TransportContext& ctx, const std::vector<double>& gpsi) {
    const SpatialGrid& xg = ctx.xgrid();
    const PenalizedConfig& cfg = ctx.config();
    const double tau = ctx.eigen().tau;
    const double rate = 2.0 * cfg.gamma - tau;
    if (rate <= 0.0) {
        throw std::invalid_argument("compute_h: tau - 2 gamma >= 0, the profile integral diverges");
    }
    const std::size_t nx = xg.size();
    std::vector<double> T(nx);
    // tail beyond L: constant extension of the moment profile
    T[nx - 1] = gpsi[nx - 1] / rate;
    for (std::size_t j = nx - 1; j-- > 0;) {
        double dx = xg.dx(j);
        double z = rate * dx;
        double E, c0, c1;
        exp_coeffs(z, E, c0, c1);
        // int_0^dx e^{-rate z} G(x_j + z) dz with G linear on the cell
        double I = dx * (gpsi[j] * c0 - (gpsi[j] - gpsi[j + 1]) * c1);
        T[j] = I + E * T[j + 1];
    }
    std::vector<double> h(nx);
    for (std::size_t j = 0; j < nx; ++j) h[j] = -std::exp(-cfg.gamma * xg.x[j]) * T[j];
    return h;
}

std::vector<double> dx_h_identity(const TransportContext& ctx, const std::vector<double>& h,
                                  const std::vector<double>& gpsi) {
    const SpatialGrid& xg = ctx.xgrid();
    const PenalizedConfig& cfg = ctx.config();
    const double tau = ctx.eigen().tau;
    std::vector<double> out(h.size());
    for (std::size_t j = 0; j < h.size(); ++j) {
        out[j] = (cfg.gamma - tau) * h[j] + std::exp(-cfg.gamma * xg.x[j]) * gpsi[j];
    }
    return out;
}

SolutionBundle solve_nonlinear_penalized(const TransportContext& ctx, const std::vector<double>& fb,
                                         const SolutionBundle* warm_start) {
    const PenalizedConfig& cfg = ctx.config();
    const VelocityGrid& g = ctx.grid();
    const SpatialGrid& xg = ctx.xgrid();
    const EigenSolution& e = ctx.eigen();
    const std::size_t nx = xg.size();
    const std::size_t nv = g.size();

    {
        double fbsup = simd::sup_abs_w(ctx.w_table().data(), fb.data(), nv);
        if (fbsup > cfg.eps_max) {
            throw std::invalid_argument("solve_nonlinear_penalized: |w f_b| = " +
                                        std::to_string(fbsup) + " exceeds the smallness guard");
        }
    }

    SolutionBundle out;
    out.u = cfg.u;
    out.gamma = cfg.gamma;
    out.gamma0 = cfg.gamma0;
    out.fb = fb;

    Field gcur(nx, nv);
    std::vector<double> hcur(nx, 0.0);
    if (warm_start != nullptr && warm_start->g.nx == nx && warm_start->g.nv == nv) {
        gcur = warm_start->g;
        hcur = warm_start->h;
    }
    double first_norm = -1.0;
    double prev_update = 0.0;

    for (int it = 1; it <= cfg.max_iter_nl; ++it) {
        // bilinear source on every station
        Field gam(nx, nv);
        std::vector<double> gpsi(nx);
        {
            std::vector<double> Fj(nv);
            for (std::size_t j = 0; j < nx; ++j) {
                const double* gj = gcur.station(j);
                for (std::size_t i = 0; i < nv; ++i) Fj[i] = gj[i] - hcur[j] * e.phi[i];
                auto gj_out = ctx.gamma_tilde(Fj);
                double acc = 0.0;
                for (std::size_t i = 0; i < nv; ++i) acc += g.q[i] * e.psi[i] * gj_out[i];
                gpsi[j] = acc;
                std::copy(gj_out.begin(), gj_out.end(), gam.station(j));
            }
        }
        std::vector<double> h = compute_h(ctx, gpsi);

        // source e^{-gamma x}(I - P_u) Gamma
        Field Q(nx, nv);
        for (std::size_t j = 0; j < nx; ++j) {
            double ex = std::exp(-cfg.gamma * xg.x[j]);
            const double* gm = gam.station(j);
            double* q = Q.station(j);
            for (std::size_t i = 0; i < nv; ++i) {
                q[i] = ex * (gm[i] + gpsi[j] * (g.xi1[i] + cfg.u) * e.phi[i]);
            }
        }

        std::vector<double> gb(nv);
        for (std::size_t i = 0; i < nv; ++i) gb[i] = fb[i] + h[0] * e.phi[i];

        LinearSolveResult lin = solve_linear_penalized(ctx, Q, gb, &gcur);

        double update = w_sup_diff(ctx, lin.g, gcur);
        for (std::size_t j = 0; j < nx; ++j) update = std::max(update, std::fabs(h[j] - hcur[j]));
        IterationRecord rec;
        rec.iter = it;
        rec.update = update;
        rec.ratio = prev_update > 0.0 ? update / prev_update : 0.0;
        out.outer_history.push_back(rec);
        prev_update = update;

        gcur = std::move(lin.g);
        hcur = std::move(h);

        double norm = ctx.w_sup_field(gcur);
        for (double hv : hcur) norm = std::max(norm, std::fabs(hv));
        if (first_norm < 0.0) first_norm = norm;
        if (norm > 10.0 * first_norm && it > 1) {
            throw std::runtime_error(
                "solve_nonlinear_penalized: iterates grew past 10x the first sweep; "
                "reduce the boundary amplitude eps");
        }
        if (update < cfg.tol_nl) {
            out.converged = true;
            break;
        }
    }

    out.g = std::move(gcur);
    out.h = std::move(hcur);
    out.w_g_sup = ctx.w_sup_field(out.g);
    out.h_sup = 0.0;
    for (double hv : out.h) out.h_sup = std::max(out.h_sup, std::fabs(hv));
    out.eps = simd::sup_abs_w(ctx.w_table().data(), fb.data(), nv);

    // penalty-moment traces
    out.m_plus.resize(nx);
    out.m_zero.resize(nx);
    out.m_psi.resize(nx);
    const auto& xp = ctx.spectral().basis().chi[0];
    const auto& x0 = ctx.spectral().basis().chi[1];
    for (std::size_t j = 0; j < nx; ++j) {
        const double* gj = out.g.station(j);
        double mp = 0.0, mz = 0.0, ms = 0.0;
        for (std::size_t i = 0; i < nv; ++i) {
            double wq = g.q[i] * (g.xi1[i] + cfg.u) * gj[i];
            mp += wq * xp[i];
            mz += wq * x0[i];
            ms += wq * e.psi[i];
        }
        out.m_plus[j] = mp;
        out.m_zero[j] = mz;
        out.m_psi[j] = ms;
    }
    return out;
}

TuneResult tune_boundary(const TransportContext& ctx, const BoundaryFamily& family,
                         const AdmissibilityData& adm, double tol, int max_steps,
                         const SolutionBundle* warm_start) {
    TuneResult tr;
    const VelocityGrid& g = ctx.grid();

    const SolutionBundle* warm = warm_start;
    auto solve_at = [&](double a1, double a2) {
        auto fb = family.assemble(a1, a2);
        return solve_nonlinear_penalized(ctx, fb, warm);
    };
    auto resid_of = [&](const SolutionBundle& b) {
        std::vector<double> g0(b.g.station(0), b.g.station(0) + g.size());
        return admissibility_residual(g, ctx.config().u, adm, g0);
    };

    double a1 = 0.0, a2 = 0.0;
    SolutionBundle bundle = solve_at(a1, a2);
    warm = &bundle;  // later solves differ by O(eps) boundary changes
    auto r = resid_of(bundle);
    double rn = std::hypot(r[0], r[1]);

    Matrix J(2, 2);
    bool have_j = false;
    for (int step = 0; step < max_steps && rn >= tol; ++step) {
        if (!have_j || step % 3 == 2) {
            const double da = 0.25;
            auto bp1 = solve_at(a1 + da, a2);
            auto rp1 = resid_of(bp1);
            auto bp2 = solve_at(a1, a2 + da);
            auto rp2 = resid_of(bp2);
            J(0, 0) = (rp1[0] - r[0]) / da;
            J(1, 0) = (rp1[1] - r[1]) / da;
            J(0, 1) = (rp2[0] - r[0]) / da;
            J(1, 1) = (rp2[1] - r[1]) / da;
            have_j = true;
            double det = J(0, 0) * J(1, 1) - J(0, 1) * J(1, 0);
            double nrm = std::fabs(J(0, 0)) + std::fabs(J(0, 1)) + std::fabs(J(1, 0)) +
                         std::fabs(J(1, 1));
            tr.jacobian_cond = nrm * nrm / std::max(std::fabs(det), 1e-300);
            if (std::fabs(det) < 1e-14 * nrm * nrm) {
                throw std::runtime_error("tune_boundary: near-singular response matrix, cond ~ " +
                                         std::to_string(tr.jacobian_cond));
            }
        }
        double det = J(0, 0) * J(1, 1) - J(0, 1) * J(1, 0);
        double d1 = (-r[0] * J(1, 1) + r[1] * J(0, 1)) / det;
        double d2 = (-J(0, 0) * r[1] + J(1, 0) * r[0]) / det;
        a1 += d1;
        a2 += d2;
        if (std::fabs(a1) > family.box || std::fabs(a2) > family.box) {
            throw std::runtime_error("tune_boundary: amplitudes left the admissible box");
        }
        bundle = solve_at(a1, a2);
        r = resid_of(bundle);
        rn = std::hypot(r[0], r[1]);
        ++tr.newton_steps;
    }
    tr.a1 = a1;
    tr.a2 = a2;
    tr.residual = r;
    tr.converged = rn < tol;
    bundle.a1 = a1;
    bundle.a2 = a2;
    // on a residual floor above tol the best point is still returned;
    // callers decide whether that is fatal
    tr.bundle = std::move(bundle);
    return tr;
}

void reconstruct_f(const TransportContext& ctx, SolutionBundle& b) {
    const SpatialGrid& xg = ctx.xgrid();
    const EigenSolution& e = ctx.eigen();
    const std::size_t nx = b.g.nx, nv = b.g.nv;
    b.f = Field(nx, nv);
    for (std::size_t j = 0; j < nx; ++j) {
        double ex = std::exp(-ctx.config().gamma * xg.x[j]);
        const double* gj = b.g.station(j);
        double* fj = b.f.station(j);
        for (std::size_t i = 0; i < nv; ++i) {
            fj[i] = ex * (gj[i] - b.h[j] * e.phi[i]);
        }
    }
    b.has_f = true;
}

ResidualReport residual_check(const TransportContext& ctx, const Field& f) {
    const VelocityGrid& g = ctx.grid();
    const SpatialGrid& xg = ctx.xgrid();
    const std::size_t nx = f.nx, nv = f.nv;
    const auto& w = ctx.w_table();

    ResidualReport rep;
    double l2 = 0.0, mass = 0.0;
    std::vector<double> fj(nv), res(nv);
    for (std::size_t j = 1; j + 1 < nx; ++j) {
        double hm = xg.x[j] - xg.x[j - 1];
        double hp = xg.x[j + 1] - xg.x[j];
        const double* fm = f.station(j - 1);
        const double* f0 = f.station(j);
        const double* fp = f.station(j + 1);
        std::copy(f0, f0 + nv, fj.begin());
        auto lf = ctx.spectral().apply_Ltilde(fj);
        auto gam = ctx.gamma_tilde(fj);
        for (std::size_t i = 0; i < nv; ++i) {
            // second-order derivative on the nonuniform stencil
            double dfdx = (-hp / (hm * (hm + hp))) * fm[i] +
                          ((hp - hm) / (hm * hp)) * f0[i] +
                          (hm / (hp * (hm + hp))) * fp[i];
            res[i] = (g.xi1[i] + ctx.config().u) * dfdx + lf[i] - gam[i];
        }
        double sup = simd::sup_abs_w(w.data(), res.data(), nv);
        rep.w_sup = std::max(rep.w_sup, sup);
        double cellw = 0.5 * (hm + hp);
        for (std::size_t i = 0; i < nv; ++i) {
            l2 += cellw * g.q[i] * w[i] * res[i] * res[i];
            mass += cellw * g.q[i];
        }
    }
    rep.w_l2 = std::sqrt(l2 / std::max(mass, 1e-300));
    return rep;
}

namespace {

void write_matrix_bin(const std::string& path, const Field& f, const SpatialGrid& xg) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_bundle: cannot write " + path);
    out.write(reinterpret_cast<const char*>(f.data.data()), sizeof(double) * f.data.size());
    std::ofstream side(path + ".json");
    side << "{\n  \"layout\": \"row-major float64 little-endian\",\n";
    side << "  \"axes\": [\"x_station\", \"velocity_node\"],\n";
    side << "  \"shape\": [" << f.nx << ", " << f.nv << "],\n";
    side << "  \"x_first\": " << xg.x.front() << ",\n  \"x_last\": " << xg.x.back() << "\n}\n";
}

}  // namespace

void save_bundle(const std::string& dir, const TransportContext& ctx, const SolutionBundle& b) {
    std::filesystem::create_directories(dir);
    const SpatialGrid& xg = ctx.xgrid();
    write_matrix_bin(dir + "/g.bin", b.g, xg);
    if (b.has_f) write_matrix_bin(dir + "/f.bin", b.f, xg);
    {
        std::ofstream out(dir + "/h.csv");
        out << "x,h\n";
        char buf[64];
        for (std::size_t j = 0; j < b.h.size(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", xg.x[j], b.h[j]);
            out << buf;
        }
    }
    {
        std::ofstream out(dir + "/moments.csv");
        out << "x,m_plus,m_zero,m_psi\n";
        char buf[128];
        for (std::size_t j = 0; j < b.m_plus.size(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", xg.x[j], b.m_plus[j],
                          b.m_zero[j], b.m_psi[j]);
            out << buf;
        }
    }
    {
        std::ofstream out(dir + "/convergence.csv");
        out << "iter,update,ratio\n";
        char buf[96];
        for (const auto& r : b.outer_history) {
            std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", r.iter, r.update, r.ratio);
            out << buf;
        }
    }
}

}  // namespace kbl
