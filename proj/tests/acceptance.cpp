// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure.  Tolerances are pinned here, not computed.

#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "kbl/collision.hpp"
#include "kbl/diagnostics.hpp"
#include "kbl/grids.hpp"
#include "kbl/kinetic_weight.hpp"
#include "kbl/numerics.hpp"
#include "kbl/simd.hpp"
#include "kbl/spectral.hpp"
#include "kbl/transport.hpp"

using namespace kbl;

namespace {

int g_failures = 0;

void report(int criterion, const std::string& name, bool ok, const std::string& detail) {
    std::printf("[%s] criterion %2d: %-34s %s\n", ok ? "PASS" : "FAIL", criterion, name.c_str(),
                detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

std::vector<double> invariant_field(const VelocityGrid& g, int which) {
    auto sM = sqrt_maxwellian_table(g);
    std::vector<double> v(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        double c = 1.0;
        if (which == 1) c = g.xi1[i];
        if (which == 2) c = g.xi2[i];
        if (which == 3) c = g.xi3[i];
        if (which == 4) c = g.speed2(i);
        v[i] = c * sM[i];
    }
    return v;
}

std::vector<double> ker_residuals(const VelocityGrid& g, const CollisionOperator& op) {
    std::vector<double> out;
    for (int w = 0; w < 5; ++w) {
        auto inv = invariant_field(g, w);
        auto lf = op.apply_L(inv);
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            num += g.q[i] * lf[i] * lf[i];
            den += g.q[i] * inv[i] * inv[i];
        }
        out.push_back(std::sqrt(num / den));
    }
    return out;
}

}  // namespace

int main() {
    const int threads = 0;
    std::printf("backend: %s\n", simd::backend_name());

    // shared coarse operator stack (8^3, the solver scale)
    VelocityGrid g8 = build_velocity_grid(6.0, 8, VelocityScheme::Uniform);
    CollisionOperator op8 = assemble_collision(g8, physical_constants(), threads);
    SpectralSolver sp8(op8, WeightParams{}, 0.05, threads);

    // ---- criterion 1: spectral identities at 16^3
    {
        VelocityGrid g16 = build_velocity_grid(6.0, 16, VelocityScheme::Uniform);
        auto basis = build_basis(g16);
        double flux = 0.0, flux0 = 0.0;
        for (std::size_t i = 0; i < g16.size(); ++i) {
            flux += g16.q[i] * g16.xi1[i] * basis.chi[0][i] * basis.chi[0][i];
            flux0 += g16.q[i] * g16.xi1[i] * basis.chi[1][i] * basis.chi[1][i];
        }
        double target = std::sqrt(5.0 / 3.0);
        bool ok = std::fabs(flux - target) < 1e-2 && basis.gram_defect < 1e-3 &&
                  std::fabs(flux0) < 1e-3;
        report(1, "spectral identities",
               ok,
               fmt("flux=%.6f (target %.6f, err %.1e), gram=%.1e, center-flux=%.1e", flux, target,
                   std::fabs(flux - target), basis.gram_defect, std::fabs(flux0)));
    }

    // ---- criterion 2: kernel laws under refinement
    {
        VelocityGrid g16 = build_velocity_grid(7.0, 16, VelocityScheme::Uniform);
        CollisionOperator op16 = assemble_collision(g16, physical_constants(), threads);

        bool sym = true;
        Rng rng(13);
        for (int k = 0; k < 300; ++k) {
            std::size_t i = rng.next_u64() % g8.size();
            std::size_t j = rng.next_u64() % g8.size();
            if (op8.khat[i * g8.size() + j] / g8.q[j] != op8.khat[j * g8.size() + i] / g8.q[i]) {
                sym = false;
            }
        }
        auto rc = ker_residuals(g8, op8);
        auto rf = ker_residuals(g16, op16);
        bool shrink = true;
        for (int w = 0; w < 5; ++w) shrink = shrink && (rf[w] < rc[w]);

        auto bc = op8.ktheta_rowsums(0.125);
        auto bf = op16.ktheta_rowsums(0.125);
        double sup_c = 0.0, sup_f = 0.0;
        for (double v : bc) sup_c = std::max(sup_c, v);
        for (double v : bf) sup_f = std::max(sup_f, v);
        double drift = std::fabs(sup_f / sup_c - 1.0);

        bool ok = sym && shrink && drift <= 0.2;
        report(2, "kernel laws", ok,
               fmt("symmetry=%s, ker residual %.3f->%.3f (worst), k_theta sup %.3f->%.3f "
                   "(drift %.1f%%)",
                   sym ? "exact" : "BROKEN", rc[4], rf[4], sup_c, sup_f, 100.0 * drift));
    }

    // ---- criterion 3: velocity lemmas
    {
        KineticWeight kw(op8.nu0, 0.02);
        auto rep = verify_velocity_lemma(kw, 10000, 2027, 1e-12);
        bool ok = rep.violations == 0;
        report(3, "velocity lemmas", ok,
               fmt("samples=%ld violations=%ld worst margins %.2e / %.2e", rep.samples,
                   rep.violations, rep.worst_margin_tilde, rep.worst_margin_alpha));
    }

    // ---- criterion 4: cutoff contract
    {
        bool exact = (chi_cutoff(0.25) == 0.25) && (chi_cutoff(5.0) == 1.0);
        double worst_slope = 0.0, worst_s4 = -1e300;
        for (int k = 0; k <= 200000; ++k) {
            double s = 3.0 * k / 200000.0;
            worst_slope = std::max(worst_slope, chi_cutoff_prime(s));
            worst_s4 = std::max(worst_s4, s * chi_cutoff_prime(s) - 4.0 * chi_cutoff(s));
        }
        bool ok = exact && worst_slope <= 1.0 + 1e-14 && worst_s4 <= 1e-14;
        report(4, "cutoff contract", ok,
               fmt("identity/saturation exact=%s, max chi'=%.12f, max(s chi'-4chi)=%.2e",
                   exact ? "yes" : "no", worst_slope, worst_s4));
    }

    // ---- criterion 5: damped singular integrals, four regimes
    {
        KineticWeight kw(op8.nu0, 0.02);
        VelocityGrid g16 = build_velocity_grid(6.0, 16, VelocityScheme::Uniform);
        NlnEvaluator n8(g8, kw, 3.0 / 32.0);
        NlnEvaluator n16(g16, kw, 3.0 / 32.0);
        double t = 40.0 / op8.nu0;
        Rng rng(555);
        struct Acc {
            double c8 = 0.0, c16 = 0.0;
        } large, small, inner, two;
        int accepted = 0;
        while (accepted < 200) {
            std::array<double, 3> xi = {rng.uniform(-5.0, 5.0), rng.uniform(-4.0, 4.0),
                                        rng.uniform(-4.0, 4.0)};
            double x = std::fabs(rng.normal()) * 2.0;
            if (x - t * (xi[0] + kw.u) < 0.0) continue;
            ++accepted;
            large.c8 = std::max(large.c8, n8.outer(xi, x, t, t).ratio);
            small.c8 = std::max(small.c8, n8.outer(xi, x, t, 1e-3).ratio);
            inner.c8 = std::max(inner.c8, n8.inner(xi, x, t).ratio);
            two.c8 = std::max(two.c8, n8.two_kernel(xi, x, t).ratio);
            if (accepted % 4 == 0) {  // doubling study on a subsample
                large.c16 = std::max(large.c16, n16.outer(xi, x, t, t).ratio);
                small.c16 = std::max(small.c16, n16.outer(xi, x, t, 1e-3).ratio);
                inner.c16 = std::max(inner.c16, n16.inner(xi, x, t).ratio);
                two.c16 = std::max(two.c16, n16.two_kernel(xi, x, t).ratio);
            }
        }
        auto stable = [](const Acc& a) { return a.c16 / a.c8 > 0.7 && a.c16 / a.c8 < 1.3; };
        bool bounded = large.c8 < 1e3 && small.c8 < 1e3 && inner.c8 < 1e3 && two.c8 < 1e3;
        bool ok = bounded && stable(large) && stable(small) && stable(inner) && stable(two);
        report(5, "singular time integrals", ok,
               fmt("fitted constants: largeT %.2f smallT %.2f inner %.2f two %.2f; doubling "
                   "drifts %.0f%%/%.0f%%/%.0f%%/%.0f%%",
                   large.c8, small.c8, inner.c8, two.c8, 100.0 * std::fabs(large.c16 / large.c8 - 1.0),
                   100.0 * std::fabs(small.c16 / small.c8 - 1.0),
                   100.0 * std::fabs(inner.c16 / inner.c8 - 1.0),
                   100.0 * std::fabs(two.c16 / two.c8 - 1.0)));
    }

    // ---- criterion 6: slow-branch eigen data
    {
        double r1 = sp8.eigenpair(0.01).tau / 0.01;
        double r2 = sp8.eigenpair(0.02).tau / 0.02;
        double r4 = sp8.eigenpair(0.04).tau / 0.04;
        double var = std::max({std::fabs(r1 - r2), std::fabs(r1 - r4), std::fabs(r2 - r4)}) /
                     std::fabs(r2);
        const auto& e8 = sp8.eigenpair_with_psi(0.02, 1e-3);

        VelocityGrid g16 = build_velocity_grid(6.0, 16, VelocityScheme::Uniform);
        CollisionOperator op16 = assemble_collision(g16, physical_constants(), threads);
        SpectralSolver sp16(op16, WeightParams{}, 0.05, threads);
        const auto& e16 = sp16.eigenpair_with_psi(0.02, 1e-3);

        double rphi = e16.w_phi_sup / e8.w_phi_sup;
        double rpsi = e16.w_psi_sup / e8.w_psi_sup;
        bool ok = var < 0.25 && e8.norm_residual < 1e-10 && e16.norm_residual < 1e-10 &&
                  rphi > 0.5 && rphi < 2.0 && rpsi > 0.5 && rpsi < 2.0;
        report(6, "eigen branch", ok,
               fmt("tau/u=%.4f var=%.2f%%, norm res %.1e/%.1e, refinement ratios phi %.3f psi %.3f",
                   r2, 100.0 * var, e8.norm_residual, e16.norm_residual, rphi, rpsi));
    }

    // ---- criteria 7-10 share the solver stack
    GammaEvaluator gamma8(g8, GammaMethod::ProductQuadrature);
    PenalizedConfig cfg;
    cfg.u = 0.02;
    cfg.gamma = 0.004;
    cfg.gamma0 = 0.002;
    cfg.tol_nl = 1e-8;
    cfg.threads = threads;
    SpatialGrid xg = build_spatial_grid(30.0 / cfg.gamma0, 260, 1.15, 1e-4);
    TransportContext ctx(xg, sp8, gamma8, cfg);

    auto fb_gauss = BoundaryFamily::pure_gaussian(g8, 1e-3);
    auto fb_eval = [](const std::array<double, 3>& xi) {
        return 1e-3 * std::exp(-(xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]));
    };

    SolutionBundle base = solve_nonlinear_penalized(ctx, fb_gauss.assemble(0.0, 0.0));
    reconstruct_f(ctx, base);
    ResidualReport res_base = residual_check(ctx, base.f);

    // refined slab: lower grading ratio shrinks every interior cell
    SpatialGrid xg_f = build_spatial_grid(30.0 / cfg.gamma0, 400, 1.08, 1e-4);
    TransportContext ctx_f(xg_f, sp8, gamma8, cfg);
    SolutionBundle fine = solve_nonlinear_penalized(ctx_f, fb_gauss.assemble(0.0, 0.0));
    reconstruct_f(ctx_f, fine);
    ResidualReport res_fine = residual_check(ctx_f, fine.f);

    // tuned solutions solve the original equation (no penalty remainder), so
    // they carry the refinement study of the reconstruction residual
    auto adm = build_admissibility(sp8, cfg.u, cfg.gamma);
    auto fam = BoundaryFamily::tunable(g8, 1e-3, cfg.u);
    auto tuned = tune_boundary(ctx, fam, adm, 1e-9, 8);
    reconstruct_f(ctx, tuned.bundle);
    ResidualReport res_tuned = residual_check(ctx, tuned.bundle.f);
    auto tuned_fine = tune_boundary(ctx_f, fam, adm, 1e-9, 8, &fine);
    reconstruct_f(ctx_f, tuned_fine.bundle);
    ResidualReport res_tuned_fine = residual_check(ctx_f, tuned_fine.bundle.f);

    // ---- criterion 7: nonlinear solve
    {
        auto half = solve_nonlinear_penalized(ctx, BoundaryFamily::pure_gaussian(g8, 0.5e-3)
                                                       .assemble(0.0, 0.0),
                                              &base);
        double c_full = (base.w_g_sup + base.h_sup) / 1e-3;
        double c_half = (half.w_g_sup + half.h_sup) / 0.5e-3;
        double cdrift = std::fabs(c_full / c_half - 1.0);
        bool ok = base.converged && half.converged && cdrift < 0.2 &&
                  res_tuned_fine.w_l2 < res_tuned.w_l2;
        report(7, "nonlinear solve", ok,
               fmt("picard iters=%zu, C=%.3f (eps/2 drift %.1f%%), tuned residual wl2 %.2e -> "
                   "%.2e (untuned %.2e -> %.2e)",
                   base.outer_history.size(), c_full, 100.0 * cdrift, res_tuned.w_l2,
                   res_tuned_fine.w_l2, res_base.w_l2, res_fine.w_l2));
    }

    // ---- criterion 8: de-penalization through boundary tuning
    // The two admissibility conditions nearly exhaust the Maxwell-weighted
    // inflow content of an 8^3 grid (the tuned datum there collapses toward
    // zero), so this criterion runs on a 10^3 stack where the admissible
    // manifold carries an order-one fraction of the boundary amplitude.
    {
        VelocityGrid g10 = build_velocity_grid(6.0, 10, VelocityScheme::Uniform);
        CollisionOperator op10 = assemble_collision(g10, physical_constants(), threads);
        SpectralSolver sp10(op10, WeightParams{}, 0.05, threads);
        GammaEvaluator gamma10(g10, GammaMethod::ProductQuadrature);
        PenalizedConfig cfg10 = cfg;
        SpatialGrid xg10 = build_spatial_grid(4000.0, 160, 1.15, 1e-4);
        TransportContext ctx10(xg10, sp10, gamma10, cfg10);
        auto adm10 = build_admissibility(sp10, cfg10.u, cfg10.gamma);
        auto fam10 = BoundaryFamily::tunable(g10, 1e-3, cfg10.u);
        auto tr = tune_boundary(ctx10, fam10, adm10, 1e-9, 8);

        std::size_t jm = 0, jl = xg10.size() - 1;
        for (std::size_t j = 0; j < xg10.size(); ++j) {
            if (xg10.x[j] <= 0.5 * xg10.L) jm = j;
        }
        double worst_m = 0.0;
        for (std::size_t j : {std::size_t(0), jm, jl}) {
            worst_m = std::max({worst_m, std::fabs(tr.bundle.m_plus[j]),
                                std::fabs(tr.bundle.m_psi[j])});
        }
        // the tuned datum must stay an order-one fraction of the family base
        double f_sup = 0.0, b_sup = 0.0;
        auto fbv = fam10.assemble(tr.a1, tr.a2);
        for (std::size_t i = 0; i < g10.size(); ++i) {
            if (g10.xi1[i] + cfg10.u <= 0.0) continue;
            f_sup = std::max(f_sup, std::fabs(fbv[i]));
            b_sup = std::max(b_sup, 1e-3 * std::fabs(fam10.base[i]));
        }
        bool ok = tr.converged && std::fabs(tr.residual[0]) < 1e-8 &&
                  std::fabs(tr.residual[1]) < 1e-8 && worst_m < 10.0 * cfg10.tol_nl &&
                  f_sup > 0.05 * b_sup;
        report(8, "de-penalization", ok,
               fmt("residuals (%.1e, %.1e), a=(%.3f, %.3f), worst penalty moment %.2e "
                   "(bound %.0e), datum/base amplitude %.2f",
                   tr.residual[0], tr.residual[1], tr.a1, tr.a2, worst_m, 10.0 * cfg10.tol_nl,
                   f_sup / b_sup));
    }

    // ---- criteria 9-10: decay and regularity dichotomy on the gaussian run
    RegularityReport rr = regularity_report(ctx, base, fb_eval);
    RegularityReport rr_f = regularity_report(ctx_f, fine, fb_eval);
    {
        bool ok = rr.f_decay_slope <= -cfg.gamma0 && rr.c1_decay_slope <= -cfg.gamma0;
        report(9, "exponential decay", ok,
               fmt("fit slopes: f %.5f, weighted profile %.5f (bound %.4f)", rr.f_decay_slope,
                   rr.c1_decay_slope, -cfg.gamma0));
    }
    {
        double c1_ratio = rr_f.c1_sup / rr.c1_sup;
        bool c1_ok = std::isfinite(rr.c1_sup) && c1_ratio > 0.5 && c1_ratio < 2.0;
        bool slope_ok = std::fabs(rr.grazing_slope_boundary + 1.0) <= 0.2;
        bool w1p_ok = true;
        std::string wdetail;
        for (double p : {1.0, 1.5, 1.9}) {
            double ratio = rr_f.w1p.at(p) / rr.w1p.at(p);
            w1p_ok = w1p_ok && ratio > 0.85 && ratio < 1.15;
            wdetail += fmt("p%.1f:%.0f%% ", p, 100.0 * std::fabs(ratio - 1.0));
        }
        // growth of the measured table plus the oracle anchor of the banded
        // delta quadrature on the saturating profile
        bool grow_ok = rr.h1loc.at(0.001) > rr.h1loc.at(0.01) && rr.h1loc.at(0.01) > rr.h1loc.at(0.1);
        auto synth = h1loc_synthetic_alpha(ctx, {0.1, 0.01, 0.001});
        double scale = op8.nu0 / 8.0;
        auto oracle = [&](double d) {
            return adaptive_simpson([](double x) { return std::atan(1.0 / x) / x; }, d * scale,
                                    1.0, 1e-12);
        };
        double q1 = (synth.at(0.01) - synth.at(0.1)) / (oracle(0.01) - oracle(0.1));
        double q2 = (synth.at(0.001) - synth.at(0.01)) / (oracle(0.001) - oracle(0.01));
        bool oracle_ok = std::fabs(q1 / q2 - 1.0) <= 0.10;
        bool ok = c1_ok && slope_ok && w1p_ok && grow_ok && oracle_ok;
        report(10, "regularity dichotomy", ok,
               fmt("c1 sup=%.2e (ratio %.2f), grazing slope %.3f, w1p drift %s, table growth "
                   "%.2e/%.2e/%.2e, oracle gap %.1f%%",
                   rr.c1_sup, c1_ratio, rr.grazing_slope_boundary, wdetail.c_str(),
                   rr.h1loc.at(0.1), rr.h1loc.at(0.01), rr.h1loc.at(0.001),
                   100.0 * std::fabs(q1 / q2 - 1.0)));
    }

    // ---- criterion 11: integrability anchor
    {
        double v = alpha_integrability(1.0, 0.0);
        double target = 2.0 * std::log(1.0 + std::sqrt(2.0));
        bool ok = std::fabs(v - target) < 1e-4;
        report(11, "integrability anchor", ok,
               fmt("table %.8f vs closed form %.8f (err %.1e)", v, target, std::fabs(v - target)));
    }

    std::printf("%s (%d failure%s)\n", g_failures == 0 ? "ACCEPTANCE PASSED" : "ACCEPTANCE FAILED",
                g_failures, g_failures == 1 ? "" : "s");
    return g_failures == 0 ? 0 : 1;
}
