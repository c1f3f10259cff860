#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "kbl/collision.hpp"
#include "kbl/grids.hpp"
#include "kbl/numerics.hpp"
#include "kbl/spectral.hpp"
#include "kbl/transport.hpp"

using namespace kbl;

namespace {

// shared small setup: one assembly, one context, one converged solve
struct Shared {
    VelocityGrid grid = build_velocity_grid(6.0, 8, VelocityScheme::Uniform);
    CollisionOperator op = assemble_collision(grid, physical_constants(), 0);
    SpectralSolver sp{op, WeightParams{}, 0.05, 0};
    GammaEvaluator gamma{grid, GammaMethod::ProductQuadrature};
    PenalizedConfig cfg;
    SpatialGrid xg;
    std::unique_ptr<TransportContext> ctx;
    SolutionBundle bundle;
    bool solved = false;

    Shared() {
        cfg.u = 0.02;
        cfg.gamma = 0.004;
        cfg.gamma0 = 0.002;
        cfg.tol_nl = 1e-8;
        cfg.threads = 0;
        xg = build_spatial_grid(4000.0, 160, 1.15, 1e-4);
        ctx = std::make_unique<TransportContext>(xg, sp, gamma, cfg);
    }
    const SolutionBundle& solve() {
        if (!solved) {
            auto fb = BoundaryFamily::pure_gaussian(grid, 1e-3).assemble(0.0, 0.0);
            bundle = solve_nonlinear_penalized(*ctx, fb);
            reconstruct_f(*ctx, bundle);
            solved = true;
        }
        return bundle;
    }
};

Shared& shared() {
    static Shared s;
    return s;
}

}  // namespace

TEST_CASE("config validation") {
    PenalizedConfig c;
    c.gamma = 0.004;
    c.gamma0 = 0.002;
    CHECK_NOTHROW(c.validate(5.2));
    c.gamma0 = 0.01;
    CHECK_THROWS(c.validate(5.2));  // gamma0 must stay below gamma
    c.gamma0 = 0.002;
    c.gamma = 0.05;
    CHECK_THROWS(c.validate(5.2));  // t^2 gamma leaves the smallness regime
    c = PenalizedConfig{};
    c.accel = "turbo";
    CHECK_THROWS(c.validate(5.2));
}

TEST_CASE("characteristic sweep solves single-channel problems exactly") {
    auto& s = shared();
    const std::size_t nx = s.xg.size(), nv = s.grid.size();

    SUBCASE("homogeneous problem stays zero") {
        Field Q(nx, nv);
        std::vector<double> gb(nv, 0.0);
        auto g = transport_sweep(s.grid, s.xg, s.ctx->nu_bar(), s.cfg.u, Q, gb);
        for (double v : g.data) CHECK(v == 0.0);
    }

    SUBCASE("pure exponential on one right-moving channel") {
        Field Q(nx, nv);
        std::vector<double> gb(nv, 0.0);
        std::size_t ch = 0;
        double b = 0.0;
        for (std::size_t i = 0; i < nv; ++i) {
            double bi = s.grid.xi1[i] + s.cfg.u;
            if (bi > 0.0 && (b == 0.0 || bi < b)) {
                b = bi;
                ch = i;
            }
        }
        gb[ch] = 1.0;
        auto g = transport_sweep(s.grid, s.xg, s.ctx->nu_bar(), s.cfg.u, Q, gb);
        double a = s.ctx->nu_bar()[ch] / b;
        for (std::size_t j = 0; j < nx; ++j) {
            double expect = (a * s.xg.x[j] < 650.0) ? std::exp(-a * s.xg.x[j]) : 0.0;
            if (expect > 1e-280) {
                CHECK(g.at(j, ch) == doctest::Approx(expect).epsilon(1e-12));
            }
        }
    }

    SUBCASE("equilibrium of the damped equation") {
        Field Q(nx, nv);
        for (std::size_t j = 0; j < nx; ++j) {
            for (std::size_t i = 0; i < nv; ++i) Q.at(j, i) = s.ctx->nu_bar()[i];
        }
        std::vector<double> gb(nv, 1.0), gfar(nv, 1.0);
        auto g = transport_sweep(s.grid, s.xg, s.ctx->nu_bar(), s.cfg.u, Q, gb, &gfar);
        for (double v : g.data) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
    }

    SUBCASE("nu_bar must stay positive") {
        Field Q(nx, nv);
        std::vector<double> gb(nv, 0.0), bad(nv, -1.0);
        CHECK_THROWS(transport_sweep(s.grid, s.xg, bad, s.cfg.u, Q, gb));
    }
}

TEST_CASE("linear penalized solve") {
    auto& s = shared();
    const std::size_t nx = s.xg.size(), nv = s.grid.size();

    SUBCASE("trivial data gives the trivial solution") {
        Field Q(nx, nv);
        std::vector<double> gb(nv, 0.0);
        auto lin = solve_linear_penalized(*s.ctx, Q, gb);
        CHECK(lin.converged);
        double sup = s.ctx->w_sup_field(lin.g);
        CHECK(sup < 1e-13);
    }

    SUBCASE("manufactured source converges with a small fixed-point residual") {
        const auto& e = s.ctx->eigen();
        std::vector<double> f0(nv);
        for (std::size_t i = 0; i < nv; ++i) f0[i] = 1e-3 * std::exp(-s.grid.speed2(i));
        auto gam = s.ctx->gamma_tilde(f0);
        auto pg = s.sp.P_u(e, gam);
        Field Q(nx, nv);
        for (std::size_t j = 0; j < nx; ++j) {
            double ex = std::exp(-s.cfg.gamma * s.xg.x[j]);
            for (std::size_t i = 0; i < nv; ++i) Q.at(j, i) = ex * (gam[i] - pg[i]);
        }
        std::vector<double> gb(nv, 0.0);
        auto lin = solve_linear_penalized(*s.ctx, Q, gb);
        CHECK(lin.converged);
        CHECK(lin.fixed_point_residual < 10.0 * s.cfg.tol_lin);
        // the iteration is contractive after the opening transient
        for (const auto& r : lin.history) {
            if (r.iter > 3 && r.ratio > 0.0) CHECK(r.ratio < 1.0);
        }

        // doubling gamma within the admissible window moves the answer by a
        // bounded factor
        PenalizedConfig c2 = s.cfg;
        c2.gamma = 0.008;
        c2.gamma0 = 0.004;
        TransportContext ctx2(s.xg, s.sp, s.gamma, c2);
        auto lin2 = solve_linear_penalized(ctx2, Q, gb);
        double r = ctx2.w_sup_field(lin2.g) / s.ctx->w_sup_field(lin.g);
        CHECK(r > 0.25);
        CHECK(r < 4.0);
    }
}

TEST_CASE("profile recursion for the slow amplitude") {
    auto& s = shared();
    const std::size_t nx = s.xg.size();

    SUBCASE("zero source gives the zero profile") {
        std::vector<double> zero(nx, 0.0);
        auto h = compute_h(*s.ctx, zero);
        for (double v : h) CHECK(v == 0.0);
    }

    SUBCASE("derivative identity") {
        std::vector<double> gpsi(nx);
        for (std::size_t j = 0; j < nx; ++j) gpsi[j] = std::exp(-0.01 * s.xg.x[j]);
        auto h = compute_h(*s.ctx, gpsi);
        auto dh = dx_h_identity(*s.ctx, h, gpsi);
        // compare the identity against centered differences of h; the
        // difference tolerance tracks the local cell curvature
        for (std::size_t j = 5; j + 5 < nx; j += 7) {
            double hm = s.xg.x[j] - s.xg.x[j - 1];
            double hp = s.xg.x[j + 1] - s.xg.x[j];
            double fd = (-hp / (hm * (hm + hp))) * h[j - 1] + ((hp - hm) / (hm * hp)) * h[j] +
                        (hm / (hp * (hm + hp))) * h[j + 1];
            double tol = 1e-6 + 0.5 * std::max(hm, hp) * std::max(hm, hp) * std::fabs(dh[j]);
            CHECK(std::fabs(fd - dh[j]) <= tol);
        }
        // profile bound scales with the source amplitude
        double hsup = 0.0, gsup = 0.0;
        for (std::size_t j = 0; j < nx; ++j) {
            hsup = std::max(hsup, std::fabs(h[j]));
            gsup = std::max(gsup, std::fabs(gpsi[j]));
        }
        double rate = 2.0 * s.cfg.gamma - s.ctx->eigen().tau;
        CHECK(hsup <= gsup / rate * 1.05);
    }

    SUBCASE("divergent rate is rejected") {
        // for u < 0 the slow rate is positive; a tiny gamma then breaks the
        // integrability condition of the profile integral
        PenalizedConfig c2 = s.cfg;
        c2.u = -0.02;
        c2.gamma = 1e-4;
        c2.gamma0 = 0.5e-4;
        TransportContext ctx2(s.xg, s.sp, s.gamma, c2);
        std::vector<double> one(nx, 1.0);
        CHECK_THROWS(compute_h(ctx2, one));
    }
}

TEST_CASE("nonlinear penalized solve") {
    auto& s = shared();

    SUBCASE("zero boundary data gives the zero bundle") {
        std::vector<double> fb(s.grid.size(), 0.0);
        auto b = solve_nonlinear_penalized(*s.ctx, fb);
        CHECK(b.converged);
        CHECK(b.w_g_sup < 1e-13);
        CHECK(b.h_sup < 1e-13);
    }

    SUBCASE("smallness guard") {
        std::vector<double> fb(s.grid.size(), 1.0);  // |w f_b| far above the threshold
        CHECK_THROWS(solve_nonlinear_penalized(*s.ctx, fb));
    }

    SUBCASE("converged amplitude scales linearly with the data") {
        const auto& b1 = s.solve();
        CHECK(b1.converged);
        double n1 = b1.w_g_sup + b1.h_sup;
        auto fb2 = BoundaryFamily::pure_gaussian(s.grid, 0.5e-3).assemble(0.0, 0.0);
        auto b2 = solve_nonlinear_penalized(*s.ctx, fb2, &b1);
        double n2 = b2.w_g_sup + b2.h_sup;
        CHECK(n1 / n2 == doctest::Approx(2.0).epsilon(0.2));

        // reflection symmetry of the fixed point
        double defect = 0.0;
        for (std::size_t j = 0; j < b1.g.nx; j += 13) {
            for (std::size_t i = 0; i < b1.g.nv; ++i) {
                defect = std::max(defect, std::fabs(b1.g.at(j, i) -
                                                    b1.g.at(j, s.grid.reflect[i])));
            }
        }
        CHECK(defect < 1e-12);
    }
}

TEST_CASE("reconstruction and residual") {
    auto& s = shared();
    const auto& b = s.solve();
    REQUIRE(b.has_f);
    // pointwise identity of the de-penalized sample
    const auto& e = s.ctx->eigen();
    for (std::size_t j = 0; j < b.f.nx; j += 17) {
        double ex = std::exp(-s.cfg.gamma * s.xg.x[j]);
        for (std::size_t i = 0; i < b.f.nv; i += 29) {
            CHECK(b.f.at(j, i) ==
                  doctest::Approx(ex * (b.g.at(j, i) - b.h[j] * e.phi[i])).epsilon(1e-14));
        }
    }
    auto rep = residual_check(*s.ctx, b.f);
    CHECK(std::isfinite(rep.w_sup));
    CHECK(rep.w_l2 < 1e-6);

    // zero bundle reconstructs to zero with zero residual
    SolutionBundle zb;
    zb.g = Field(s.xg.size(), s.grid.size());
    zb.h.assign(s.xg.size(), 0.0);
    reconstruct_f(*s.ctx, zb);
    for (double v : zb.f.data) CHECK(v == 0.0);
    auto zrep = residual_check(*s.ctx, zb.f);
    CHECK(zrep.w_sup == 0.0);
}

TEST_CASE("boundary tuning drives the admissibility residuals to zero") {
    auto& s = shared();
    auto adm = build_admissibility(s.sp, s.cfg.u, s.cfg.gamma);
    auto fam = BoundaryFamily::tunable(s.grid, 1e-3, s.cfg.u);
    // the family stays inside the weighted amplitude budget over the box
    CHECK(fam.w_sup(fam.box, fam.box, 0.125) <= 1e-3 * (1.0 + 1e-9));
    CHECK(fam.w_sup(-fam.box, fam.box, 0.125) <= 1e-3 * (1.0 + 1e-9));

    auto tr = tune_boundary(*s.ctx, fam, adm, 1e-9, 8);
    CHECK(tr.converged);
    CHECK(std::fabs(tr.residual[0]) < 1e-9);
    CHECK(std::fabs(tr.residual[1]) < 1e-9);
    CHECK(std::fabs(tr.a1) < fam.box);
    CHECK(std::fabs(tr.a2) < fam.box);

    // with the tuned data, the penalty moments sit at solver tolerance along
    // the slab
    const auto& tb = tr.bundle;
    std::size_t jm = 0, jl = s.xg.size() - 1;
    for (std::size_t j = 0; j < s.xg.size(); ++j) {
        if (s.xg.x[j] <= 0.5 * s.xg.L) jm = j;
    }
    for (std::size_t j : {std::size_t(0), jm, jl}) {
        CHECK(std::fabs(tb.m_plus[j]) < 10.0 * s.cfg.tol_nl);
        CHECK(std::fabs(tb.m_psi[j]) < 10.0 * s.cfg.tol_nl);
    }

    // a family already on the manifold takes no step
    auto fam2 = fam;
    for (std::size_t i = 0; i < s.grid.size(); ++i) {
        fam2.base[i] = fam.base[i] + tr.a1 * fam.bump1[i] + tr.a2 * fam.bump2[i];
    }
    auto tr2 = tune_boundary(*s.ctx, fam2, adm, 1e-8, 3);
    CHECK(tr2.converged);
    CHECK(std::fabs(tr2.a1) < 1e-4);
    CHECK(std::fabs(tr2.a2) < 1e-4);
}

TEST_CASE("bundle files") {
    auto& s = shared();
    const auto& b = s.solve();
    auto dir = std::filesystem::temp_directory_path() / "kbl_bundle_test";
    save_bundle(dir.string(), *s.ctx, b);
    CHECK(std::filesystem::exists(dir / "g.bin"));
    CHECK(std::filesystem::exists(dir / "g.bin.json"));
    CHECK(std::filesystem::exists(dir / "f.bin"));
    CHECK(std::filesystem::exists(dir / "h.csv"));
    CHECK(std::filesystem::exists(dir / "moments.csv"));
    CHECK(std::filesystem::exists(dir / "convergence.csv"));
    CHECK(std::filesystem::file_size(dir / "g.bin") ==
          sizeof(double) * s.xg.size() * s.grid.size());
    std::filesystem::remove_all(dir);
}
