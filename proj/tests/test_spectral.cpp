#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kbl/collision.hpp"
#include "kbl/grids.hpp"
#include "kbl/numerics.hpp"
#include "kbl/spectral.hpp"

using namespace kbl;

namespace {

struct Shared {
    VelocityGrid grid = build_velocity_grid(6.0, 8, VelocityScheme::Uniform);
    CollisionOperator op = assemble_collision(grid, physical_constants(), 0);
    SpectralSolver sp{op, WeightParams{}, 0.05, 0};
};

Shared& shared() {
    static Shared s;
    return s;
}

double qdot(const VelocityGrid& g, const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += g.q[i] * a[i] * b[i];
    return s;
}

}  // namespace

TEST_CASE("invariant basis identities") {
    VelocityGrid g = build_velocity_grid(6.0, 16, VelocityScheme::Uniform);
    auto b = build_basis(g);
    CHECK(b.gram_defect < 1e-3);

    double flux_plus = 0.0, flux_zero = 0.0, flux_perp = 0.0, flux_perp2 = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        flux_plus += g.q[i] * g.xi1[i] * b.chi[0][i] * b.chi[0][i];
        flux_zero += g.q[i] * g.xi1[i] * b.chi[1][i] * b.chi[1][i];
        flux_perp += g.q[i] * g.xi1[i] * b.chi[3][i] * b.chi[3][i];
        flux_perp2 += g.q[i] * g.xi1[i] * b.chi[4][i] * b.chi[4][i];
    }
    CHECK(flux_plus == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-2 / 1.29));
    CHECK(std::fabs(flux_zero) < 1e-3);
    CHECK(std::fabs(flux_perp) < 1e-10);   // odd integrand
    CHECK(std::fabs(flux_perp2) < 1e-10);

    // off-grid evaluation of the orthonormalized family stays consistent
    for (int a = 0; a < 5; ++a) {
        std::size_t i = 137;
        CHECK(b.ortho[a][i] ==
              doctest::Approx(b.ortho_at(a, g.node(i))).epsilon(1e-12));
    }
}

TEST_CASE("projection on the forward flux mode") {
    auto& s = shared();
    const auto& b = s.sp.basis();
    auto pp = b.project_plus(b.chi[0]);
    for (std::size_t i = 0; i < s.grid.size(); ++i) {
        CHECK(pp[i] == doctest::Approx(b.chi[0][i] * qdot(s.grid, b.chi[0], b.chi[0])).epsilon(1e-12));
    }
    // orthogonality and linearity at the coarse grid's quadrature level
    auto p0 = b.project_plus(b.chi[1]);
    double n0 = std::sqrt(qdot(s.grid, p0, p0));
    CHECK(n0 < 0.05);
    std::vector<double> mix(s.grid.size());
    for (std::size_t i = 0; i < s.grid.size(); ++i) mix[i] = 2.0 * b.chi[0][i] + 3.0 * b.chi[1][i];
    auto pm = b.project_plus(mix);
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < s.grid.size(); ++i) {
        diff = std::max(diff, std::fabs(pm[i] - 2.0 * b.chi[0][i]));
        scale = std::max(scale, std::fabs(2.0 * b.chi[0][i]));
    }
    CHECK(diff / scale < 0.05);
}

TEST_CASE("projected operator annihilates the invariants to round-off") {
    auto& s = shared();
    for (int a = 0; a < 5; ++a) {
        auto lx = s.sp.apply_Ltilde(s.sp.basis().chi[a]);
        double n = std::sqrt(qdot(s.grid, lx, lx));
        CHECK(n < 1e-12);
    }
    CHECK(s.sp.slope_constant() > 0.0);
}

TEST_CASE("slow eigenpair contract") {
    auto& s = shared();
    CHECK_THROWS(s.sp.eigenpair(0.0));
    CHECK_THROWS(s.sp.eigenpair(0.2));  // beyond the small-drift bound

    double r1 = s.sp.eigenpair(0.01).tau / 0.01;
    double r2 = s.sp.eigenpair(0.02).tau / 0.02;
    double r4 = s.sp.eigenpair(0.04).tau / 0.04;
    CHECK(std::isfinite(r1));
    double worst = std::max({std::fabs(r1 - r2), std::fabs(r1 - r4), std::fabs(r2 - r4)});
    CHECK(worst / std::fabs(r2) < 0.25);

    const auto& e = s.sp.eigenpair(0.02);
    CHECK(e.norm_residual < 1e-10);
    CHECK(e.pencil_residual < 1e-9);
    // sign convention
    double sgn = qdot(s.grid, e.phi, s.sp.basis().chi[0]);
    CHECK(sgn >= 0.0);
    // the slow rate is within a stable factor of the reduced-solve estimate
    CHECK(e.tau / 0.02 == doctest::Approx(-1.0 / s.sp.slope_constant()).epsilon(0.15));
}

TEST_CASE("difference-quotient eigenfunction") {
    auto& s = shared();
    const auto& e = s.sp.eigenpair_with_psi(0.02, 1e-3);
    REQUIRE(e.has_psi);
    CHECK(e.overlap_pm > 0.9);

    // psi u + phi0 reproduces phi exactly (algebraic identity)
    for (std::size_t i = 0; i < s.grid.size(); i += 37) {
        CHECK(e.psi[i] * e.u + e.phi0[i] == doctest::Approx(e.phi[i]).epsilon(1e-12));
    }

    // <(xi1+u) psi phi> = -1 from the normalization and flux orthogonality
    double c = 0.0;
    for (std::size_t i = 0; i < s.grid.size(); ++i) {
        c += s.grid.q[i] * (s.grid.xi1[i] + e.u) * e.psi[i] * e.phi[i];
    }
    CHECK(c == doctest::Approx(-1.0).epsilon(1e-9));

    // the weighted bound does not degrade across the sampled drifts
    const auto& e1 = s.sp.eigenpair_with_psi(0.01, 1e-3);
    const auto& e4 = s.sp.eigenpair_with_psi(0.04, 1e-3);
    CHECK(e1.w_psi_sup / e4.w_psi_sup < 5.0);
    CHECK(e4.w_psi_sup / e1.w_psi_sup < 5.0);
}

TEST_CASE("rank-one penalization maps") {
    auto& s = shared();
    const auto& e = s.sp.eigenpair_with_psi(0.02, 1e-3);
    std::vector<double> zero(s.grid.size(), 0.0);
    auto pz = s.sp.p_u(e, zero);
    for (double v : pz) CHECK(v == 0.0);

    Rng rng(7);
    auto w = w_weight_table(s.grid, 0.125);
    double cmax = 0.0, cmin = 1e300;
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> g(s.grid.size());
        for (std::size_t i = 0; i < s.grid.size(); ++i) g[i] = rng.normal() / w[i];
        auto pg = s.sp.p_u(e, g);
        // rank-one: output is a multiple of phi
        double num = qdot(s.grid, pg, e.phi);
        double den = std::sqrt(qdot(s.grid, pg, pg) * qdot(s.grid, e.phi, e.phi));
        if (den > 1e-14) CHECK(std::fabs(num) / den == doctest::Approx(1.0).epsilon(1e-10));
        // weighted bound of the compact penalized part
        auto kp = s.sp.apply_Ktilde(g);
        double a = 2.0 * 0.004;
        auto pp = s.sp.basis().project_plus(g);  // reuse the projection shape
        double wg = 0.0, wkp = 0.0;
        for (std::size_t i = 0; i < s.grid.size(); ++i) {
            wg = std::max(wg, std::fabs(w[i] * g[i]));
            wkp = std::max(wkp, std::fabs(w[i] * (kp[i] + a * pg[i])));
        }
        double ratio = wkp / wg;
        cmax = std::max(cmax, ratio);
        cmin = std::min(cmin, ratio);
    }
    // fitted constant, frozen with headroom, and stable across the samples
    CHECK(cmax < 40.0);
    CHECK(cmax / cmin < 50.0);
}

TEST_CASE("admissibility machinery") {
    auto& s = shared();
    SUBCASE("entries finite at small gamma") {
        auto adm = build_admissibility(s.sp, 0.02, 1e-3);
        for (double v : adm.A.a) CHECK(std::isfinite(v));
        CHECK(adm.eig_margin > 0.0);
    }
    auto adm = build_admissibility(s.sp, 0.02, 0.004);
    CHECK(adm.eig_margin > 1e-6);

    // left eigenvector residual l A = mu l
    for (auto [lvec, rate] : {std::pair{adm.l1, adm.mode_rates[0]}, {adm.l2, adm.mode_rates[1]}}) {
        double mu = adm.gamma - rate;
        double resid = 0.0, scale = 0.0;
        for (int c = 0; c < 3; ++c) {
            double la = 0.0;
            for (int r = 0; r < 3; ++r) la += lvec[r] * adm.A(r, c);
            resid = std::max(resid, std::fabs(la - mu * lvec[c]));
            scale = std::max(scale, std::fabs(lvec[c]));
        }
        CHECK(resid / scale < 1e-10);
        CHECK(rate < 0.0);  // both selected modes decay
    }

    SUBCASE("boundary residual functional") {
        std::vector<double> zero(s.grid.size(), 0.0);
        auto r0 = admissibility_residual(s.grid, 0.02, adm, zero);
        CHECK(r0[0] == 0.0);
        CHECK(r0[1] == 0.0);

        const auto& xp = s.sp.basis().chi[0];
        auto rp = admissibility_residual(s.grid, 0.02, adm, xp);
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t i = 0; i < s.grid.size(); ++i) {
            double wq = s.grid.q[i] * (s.grid.xi1[i] + 0.02) * xp[i];
            m1 += wq * adm.Y1[i];
            m2 += wq * adm.Y2[i];
        }
        CHECK(rp[0] == doctest::Approx(m1).epsilon(1e-14));
        CHECK(rp[1] == doctest::Approx(m2).epsilon(1e-14));
    }
}

TEST_CASE("eigen data is refinement-stable") {
    auto& s = shared();
    VelocityGrid g2 = build_velocity_grid(6.0, 12, VelocityScheme::Uniform);
    auto op2 = assemble_collision(g2, physical_constants(), 0);
    SpectralSolver sp2(op2, WeightParams{}, 0.05, 0);
    const auto& ec = s.sp.eigenpair_with_psi(0.02, 1e-3);
    const auto& ef = sp2.eigenpair_with_psi(0.02, 1e-3);
    CHECK(ef.w_phi_sup / ec.w_phi_sup > 0.5);
    CHECK(ef.w_phi_sup / ec.w_phi_sup < 2.0);
    CHECK(ef.w_psi_sup / ec.w_psi_sup > 0.5);
    CHECK(ef.w_psi_sup / ec.w_psi_sup < 2.0);
    CHECK(ef.tau / ec.tau > 0.5);
    CHECK(ef.tau / ec.tau < 2.0);
}
