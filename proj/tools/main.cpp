#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "kbl/collision.hpp"
#include "kbl/config.hpp"
#include "kbl/diagnostics.hpp"
#include "kbl/grids.hpp"
#include "kbl/kinetic_weight.hpp"
#include "kbl/numerics.hpp"
#include "kbl/simd.hpp"
#include "kbl/spectral.hpp"
#include "kbl/transport.hpp"

using namespace kbl;

namespace {

struct Session {
    Config cfg;
    VelocityGrid grid;
    CollisionOperator op;
    std::unique_ptr<SpectralSolver> spectral;
    std::unique_ptr<GammaEvaluator> gamma;
    SpatialGrid xgrid;
    PenalizedConfig pen;
    std::uint64_t op_hash = 0;
};

GradConstants constants_from_config(const Config& cfg) {
    std::string mode = cfg.get_str("collision.constants", "normalized");
    if (mode == "normalized") return normalized_constants();
    if (mode == "physical") return physical_constants();
    if (mode == "custom") {
        GradConstants c;
        c.ck1 = cfg.get_double("collision.ck1", 1.0);
        c.ck2 = cfg.get_double("collision.ck2", 1.0);
        c.mode = "custom";
        return c;
    }
    throw std::runtime_error("collision.constants must be normalized|physical|custom");
}

Session open_session(const std::string& config_path, int threads, bool need_solver_bits) {
    Session s;
    s.cfg = config_path.empty() ? Config() : Config::from_file(config_path);
    if (threads > 0) set_default_threads(threads);
    simd::select_backend(s.cfg.get_str("simd.mode", "auto"));

    double V = s.cfg.get_double("vel.radius", 6.0);
    int n = s.cfg.get_int("vel.n", 12);
    auto scheme = velocity_scheme_from_string(s.cfg.get_str("vel.scheme", "uniform"));
    s.grid = build_velocity_grid(V, n, scheme);

    GradConstants gc = constants_from_config(s.cfg);
    s.op_hash = s.cfg.subset_hash({"vel.", "collision."});
    std::string cache_dir = s.cfg.get_str("io.cache_dir", "");
    bool loaded = false;
    std::string cache_path;
    if (!cache_dir.empty()) {
        std::filesystem::create_directories(cache_dir);
        char name[64];
        std::snprintf(name, sizeof name, "/op-%016llx.bin",
                      static_cast<unsigned long long>(s.op_hash));
        cache_path = cache_dir + name;
        loaded = CollisionOperator::load_cache(cache_path, s.op_hash, s.grid, s.op);
        if (loaded) s.op.constants = gc;
    }
    if (!loaded) {
        s.op = assemble_collision(s.grid, gc, threads);
        if (!cache_dir.empty()) s.op.save_cache(cache_path, s.op_hash);
    }

    WeightParams wp;
    wp.theta = s.cfg.get_double("weights.theta", 0.125);
    wp.theta_tilde = s.cfg.get_double("weights.theta_tilde", 0.015625);
    s.spectral = std::make_unique<SpectralSolver>(s.op, wp, s.cfg.get_double("eigen.r_max", 0.05),
                                                  threads);

    if (need_solver_bits) {
        s.pen.u = s.cfg.get_double("flow.u", 0.02);
        s.pen.gamma = s.cfg.get_double("pen.gamma", 0.004);
        s.pen.gamma0 = s.cfg.get_double("pen.gamma0", 0.002);
        s.pen.alpha = s.cfg.get_double("pen.alpha", -1.0);
        s.pen.beta = s.cfg.get_double("pen.beta", -1.0);
        s.pen.t_horizon = s.cfg.get_double("pen.t_horizon", 0.0);
        s.pen.tol_lin = s.cfg.get_double("pen.tol_lin", 1e-10);
        s.pen.tol_nl = s.cfg.get_double("pen.tol_nl", 1e-8);
        s.pen.max_iter_lin = s.cfg.get_int("pen.max_iter_lin", 600);
        s.pen.max_iter_nl = s.cfg.get_int("pen.max_iter_nl", 60);
        s.pen.accel = s.cfg.get_str("pen.accel", "anderson");
        s.pen.anderson_depth = s.cfg.get_int("pen.anderson_depth", 8);
        s.pen.sweep_order = s.cfg.get_str("pen.sweep_order", "symmetric");
        s.pen.lambda_steps = s.cfg.get_int("pen.lambda_steps", 0);
        s.pen.threads = threads;

        double L = s.cfg.get_double("space.L", 0.0);
        if (L <= 0.0) L = 30.0 / s.pen.gamma0;
        s.xgrid = build_spatial_grid(L, s.cfg.get_int("space.n", 320),
                                     s.cfg.get_double("space.grade", 1.15),
                                     s.cfg.get_double("space.min_cell", 1e-4));

        GammaMethod gm = (n <= 10) ? GammaMethod::ProductQuadrature : GammaMethod::MonteCarlo;
        std::string gmode = s.cfg.get_str("gamma_op.method", "auto");
        if (gmode == "quadrature") gm = GammaMethod::ProductQuadrature;
        if (gmode == "mc") gm = GammaMethod::MonteCarlo;
        s.gamma = std::make_unique<GammaEvaluator>(
            s.grid, gm, s.cfg.get_int("gamma_op.seed", 2024),
            s.cfg.get_int("gamma_op.mc_samples", 4096));
    }
    return s;
}

BoundaryFamily family_from_config(const Session& s) {
    double eps = s.cfg.get_double("bc.eps", 1e-3);
    std::string prof = s.cfg.get_str("bc.profile", "gaussian");
    if (prof == "gaussian") return BoundaryFamily::pure_gaussian(s.grid, eps);
    if (prof == "family") {
        return BoundaryFamily::tunable(s.grid, eps, s.pen.u,
                                       s.cfg.get_double("weights.theta", 0.125));
    }
    throw std::runtime_error("bc.profile must be gaussian|family");
}

void write_csv(const std::string& path, const std::string& header,
               const std::vector<std::vector<double>>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << header << "\n";
    char buf[64];
    for (const auto& r : rows) {
        for (std::size_t k = 0; k < r.size(); ++k) {
            std::snprintf(buf, sizeof buf, "%.17g", r[k]);
            out << buf << (k + 1 == r.size() ? '\n' : ',');
        }
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"discrete-velocity half-space kinetic boundary layer laboratory"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    std::string config_path, out_dir = "out";
    long seed = 2027;
    int threads = 0;
    app.add_option("--config", config_path, "flat key = value configuration file");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--seed", seed, "random seed for sampling verdicts");
    app.add_option("--threads", threads, "worker threads (0 = hardware)");

    auto* cmd_assemble = app.add_subcommand("assemble", "build and cache the collision operator");
    auto* cmd_eigen = app.add_subcommand("eigen", "slow transport eigenpair records");
    std::vector<double> u_list{0.01, 0.02, 0.04};
    cmd_eigen->add_option("--u", u_list, "drift values");
    auto* cmd_lin = app.add_subcommand("solve-linear", "linear penalized solve with a manufactured source");
    auto* cmd_solve = app.add_subcommand("solve", "nonlinear penalized solve (+ optional boundary tuning)");
    bool do_tune = false;
    cmd_solve->add_flag("--tune", do_tune, "tune the boundary family to the admissible manifold");
    auto* cmd_verify = app.add_subcommand("verify", "lemma verdict tables");
    std::string lemma = "velocity";
    long samples = 10000;
    cmd_verify->add_option("--lemma", lemma, "velocity|nln|chi|alpha-int|ktheta");
    cmd_verify->add_option("--samples", samples, "sample count");
    auto* cmd_norms = app.add_subcommand("norms", "solve and emit the regularity norm report");
    auto* cmd_report = app.add_subcommand("report", "full verification report (JSON)");

    CLI11_PARSE(app, argc, argv);

    try {
        std::filesystem::create_directories(out_dir);

        if (cmd_assemble->parsed()) {
            Session s = open_session(config_path, threads, false);
            std::printf("nodes %zu  nu0 %.6f  nu1 %.6f  constants %s (%.6f, %.6f)\n",
                        s.grid.size(), s.op.nu0, s.op.nu1, s.op.constants.mode.c_str(),
                        s.op.constants.ck1, s.op.constants.ck2);
            auto rows = s.op.ktheta_rowsums(0.125);
            double worst = 0.0;
            for (double v : rows) worst = std::max(worst, v);
            std::printf("weighted kernel row bound: %.6f\n", worst);
            return 0;
        }

        if (cmd_eigen->parsed()) {
            Session s = open_session(config_path, threads, false);
            double gamma = s.cfg.get_double("pen.gamma", 0.004);
            std::ofstream out(out_dir + "/eigen.jsonl");
            for (double u : u_list) {
                const auto& e = s.spectral->eigenpair_with_psi(u, s.cfg.get_double("eigen.du", 1e-3));
                auto adm = build_admissibility(*s.spectral, u, gamma);
                char line[1024];
                std::snprintf(line, sizeof line,
                              "{\"u\": %.17g, \"tau\": %.17g, \"w_phi_sup\": %.17g, "
                              "\"w_psi_sup\": %.17g, \"norm_residual\": %.3e, "
                              "\"pencil_residual\": %.3e, \"overlap_pm\": %.6f, "
                              "\"A\": [[%.10g,%.10g,%.10g],[%.10g,%.10g,%.10g],[%.10g,%.10g,%.10g]], "
                              "\"eig_margin\": %.6g, \"mode_rates\": [%.6g, %.6g]}",
                              e.u, e.tau, e.w_phi_sup, e.w_psi_sup, e.norm_residual,
                              e.pencil_residual, e.overlap_pm, adm.A(0, 0), adm.A(0, 1), adm.A(0, 2),
                              adm.A(1, 0), adm.A(1, 1), adm.A(1, 2), adm.A(2, 0), adm.A(2, 1),
                              adm.A(2, 2), adm.eig_margin, adm.mode_rates[0], adm.mode_rates[1]);
                out << line << "\n";
                std::printf("u=%.4f tau=%.8f tau/u=%.5f |wphi|=%.5f |wpsi|=%.5f\n", e.u, e.tau,
                            e.tau / e.u, e.w_phi_sup, e.w_psi_sup);
            }
            std::printf("records written to %s/eigen.jsonl\n", out_dir.c_str());
            return 0;
        }

        if (cmd_lin->parsed()) {
            Session s = open_session(config_path, threads, true);
            TransportContext ctx(s.xgrid, *s.spectral, *s.gamma, s.pen);
            const auto& e = ctx.eigen();
            std::vector<double> f0(s.grid.size());
            double eps = s.cfg.get_double("bc.eps", 1e-3);
            for (std::size_t i = 0; i < s.grid.size(); ++i) {
                f0[i] = eps * std::exp(-s.grid.speed2(i));
            }
            auto gam = ctx.gamma_tilde(f0);
            auto pg = s.spectral->P_u(e, gam);
            Field Q(s.xgrid.size(), s.grid.size());
            for (std::size_t j = 0; j < s.xgrid.size(); ++j) {
                double ex = std::exp(-s.pen.gamma * s.xgrid.x[j]);
                for (std::size_t i = 0; i < s.grid.size(); ++i) {
                    Q.at(j, i) = ex * (gam[i] - pg[i]);
                }
            }
            std::vector<double> gb(s.grid.size(), 0.0);
            auto lin = solve_linear_penalized(ctx, Q, gb);
            std::vector<std::vector<double>> rows;
            for (const auto& r : lin.history) {
                rows.push_back({static_cast<double>(r.iter), r.update, r.ratio});
            }
            write_csv(out_dir + "/convergence.csv", "iter,update,ratio", rows);
            std::printf("converged=%d iterations=%d fixed-point residual=%.3e\n",
                        static_cast<int>(lin.converged), lin.iterations, lin.fixed_point_residual);
            return 0;
        }

        if (cmd_solve->parsed() || cmd_norms->parsed()) {
            Session s = open_session(config_path, threads, true);
            TransportContext ctx(s.xgrid, *s.spectral, *s.gamma, s.pen);
            BoundaryFamily fam = family_from_config(s);
            SolutionBundle bundle;
            if (do_tune || s.cfg.get_bool("bc.tune", false)) {
                auto adm = build_admissibility(*s.spectral, s.pen.u, s.pen.gamma,
                                               s.pen.alpha_eff(), s.pen.beta_eff());
                auto tr = tune_boundary(ctx, fam, adm);
                std::printf("tuned a=(%.6f, %.6f) residual=(%.3e, %.3e) steps=%d\n", tr.a1, tr.a2,
                            tr.residual[0], tr.residual[1], tr.newton_steps);
                bundle = std::move(tr.bundle);
            } else {
                auto fb = fam.assemble(s.cfg.get_double("bc.a1", 0.0), s.cfg.get_double("bc.a2", 0.0));
                bundle = solve_nonlinear_penalized(ctx, fb);
            }
            reconstruct_f(ctx, bundle);
            save_bundle(out_dir, ctx, bundle);
            auto res = residual_check(ctx, bundle.f);
            std::printf("converged=%d |wg|=%.6e |h|=%.6e residual wsup=%.3e wl2=%.3e\n",
                        static_cast<int>(bundle.converged), bundle.w_g_sup, bundle.h_sup, res.w_sup,
                        res.w_l2);

            if (cmd_norms->parsed()) {
                double eps = s.cfg.get_double("bc.eps", 1e-3);
                (void)eps;
                // boundary values at probe velocities come from interpolating
                // the assembled family, which is exact at the grid nodes and
                // adequate for the smooth profiles shipped here
                auto fbv = fam.assemble(bundle.a1, bundle.a2);
                const VelocityGrid* gp = &s.grid;
                auto fb_eval = [fbv, gp](const std::array<double, 3>& xi) {
                    return gp->interpolate(fbv, xi[0], xi[1], xi[2]);
                };
                RegularityReport rr = regularity_report(ctx, bundle, fb_eval);
                write_norm_report_json(out_dir + "/norms.json", ctx, rr,
                                       s.cfg.subset_hash({"vel.", "collision.", "space.", "pen.",
                                                          "weights.", "flow.", "bc."}));
                std::vector<std::vector<double>> rows;
                for (std::size_t j = 0; j < rr.c1_profile.size(); ++j) {
                    rows.push_back({s.xgrid.x[j], rr.c1_profile[j]});
                }
                write_csv(out_dir + "/c1_profile.csv", "x,weighted_c1_sup", rows);
                std::printf("c1_sup=%.6e decay_slope=%.6f grazing_slope=%.4f -> %s/norms.json\n",
                            rr.c1_sup, rr.c1_decay_slope, rr.grazing_slope_boundary,
                            out_dir.c_str());
            }
            return 0;
        }

        if (cmd_verify->parsed()) {
            Session s = open_session(config_path, threads, false);
            double u = s.cfg.get_double("flow.u", 0.02);
            KineticWeight kw(s.op.nu0, u);
            if (lemma == "velocity") {
                auto rep = verify_velocity_lemma(kw, samples, seed, 1e-12, true);
                std::vector<std::vector<double>> rows;
                for (const auto& r : rep.rows) {
                    rows.push_back({r.x, r.xi1, r.s, r.lhs_t, r.mid_t, r.rhs_t, r.lhs_a, r.mid_a,
                                    r.rhs_a, r.ok ? 1.0 : 0.0});
                }
                write_csv(out_dir + "/velocity_lemma.csv",
                          "x,xi1,s,lhs_tilde,mid_tilde,rhs_tilde,lhs_alpha,mid_alpha,rhs_alpha,ok",
                          rows);
                std::printf("samples=%ld violations=%ld worst margins %.3e %.3e\n", rep.samples,
                            rep.violations, rep.worst_margin_tilde, rep.worst_margin_alpha);
                return rep.violations == 0 ? 0 : 1;
            }
            if (lemma == "chi") {
                std::vector<std::vector<double>> rows;
                double worst = -1e300;
                for (long k = 0; k <= samples; ++k) {
                    double sarg = 3.0 * k / samples;
                    double v = sarg * chi_cutoff_prime(sarg) - 4.0 * chi_cutoff(sarg);
                    worst = std::max(worst, v);
                    if (k % std::max(1L, samples / 1000) == 0) {
                        rows.push_back({sarg, chi_cutoff(sarg), chi_cutoff_prime(sarg), v});
                    }
                }
                write_csv(out_dir + "/chi.csv", "s,chi,chi_prime,s_chi_prime_minus_4chi", rows);
                std::printf("max(s chi' - 4 chi) = %.3e (must be <= 0)\n", worst);
                return worst <= 1e-14 ? 0 : 1;
            }
            if (lemma == "nln") {
                NlnEvaluator nln(s.grid, kw, s.cfg.get_double("verify.nln_c", 3.0 / 32.0));
                Rng rng(seed);
                double t = 40.0 / s.op.nu0;
                std::vector<std::vector<double>> rows;
                double w_large = 0, w_small = 0, w_inner = 0, w_two = 0;
                long accepted = 0;
                for (long k = 0; k < samples * 10 && accepted < samples; ++k) {
                    std::array<double, 3> xi = {rng.uniform(-5.0, 5.0), rng.uniform(-4.0, 4.0),
                                                rng.uniform(-4.0, 4.0)};
                    double x = std::fabs(rng.normal()) * 2.0;
                    if (x - t * (xi[0] + u) < 0.0) continue;
                    ++accepted;
                    auto rl = nln.outer(xi, x, t, t);
                    auto rs = nln.outer(xi, x, t, 1e-3);
                    auto ri = nln.inner(xi, x, t);
                    auto r2 = nln.two_kernel(xi, x, t);
                    w_large = std::max(w_large, rl.ratio);
                    w_small = std::max(w_small, rs.ratio);
                    w_inner = std::max(w_inner, ri.ratio);
                    w_two = std::max(w_two, r2.ratio);
                    rows.push_back({x, xi[0], xi[1], xi[2], rl.ratio, rs.ratio, ri.ratio, r2.ratio});
                }
                write_csv(out_dir + "/nln.csv",
                          "x,xi1,xi2,xi3,ratio_largeT,ratio_smallT,ratio_inner,ratio_two", rows);
                std::printf("fitted constants: largeT %.4f smallT %.4f inner %.4f two %.4f (n=%ld)\n",
                            w_large, w_small, w_inner, w_two, accepted);
                return 0;
            }
            if (lemma == "alpha-int") {
                std::vector<std::vector<double>> rows;
                for (double p : {1.0, 1.5, 1.9}) {
                    rows.push_back({p, 0.0, alpha_integrability(p, 0.0)});
                }
                for (double d : {0.1, 0.01, 0.001}) {
                    rows.push_back({2.0, d, alpha_integrability(2.0, d)});
                }
                write_csv(out_dir + "/alpha_integrability.csv", "p,delta,value", rows);
                double v = alpha_integrability(1.0, 0.0);
                std::printf("p=1 delta=0: %.8f (closed form %.8f)\n", v,
                            2.0 * std::log(1.0 + std::sqrt(2.0)));
                return 0;
            }
            if (lemma == "ktheta") {
                auto rows_v = s.op.ktheta_rowsums(s.cfg.get_double("weights.theta", 0.125));
                std::vector<std::vector<double>> rows;
                for (std::size_t i = 0; i < rows_v.size(); ++i) {
                    rows.push_back({std::sqrt(s.grid.speed2(i)), rows_v[i]});
                }
                write_csv(out_dir + "/ktheta.csv", "speed,weighted_row_sum", rows);
                double worst = 0.0;
                for (double v : rows_v) worst = std::max(worst, v);
                std::printf("sup (1+|xi|) sum k_theta q = %.6f\n", worst);
                return 0;
            }
            throw std::runtime_error("unknown --lemma " + lemma);
        }

        if (cmd_report->parsed()) {
            Session s = open_session(config_path, threads, false);
            VerificationOptions opt;
            opt.velocity_n = s.cfg.get_int("vel.n", 8);
            opt.velocity_radius = s.cfg.get_double("vel.radius", 6.0);
            opt.lemma_samples = s.cfg.get_int("verify.samples", 10000);
            opt.nln_samples = s.cfg.get_int("verify.nln_samples", 60);
            opt.seed = seed;
            opt.run_solver = s.cfg.get_bool("verify.run_solver", true);
            opt.space_n = s.cfg.get_int("space.n", 260);
            opt.threads = threads;
            auto suite = run_verification_suite(opt);
            std::ofstream out(out_dir + "/report.json");
            out << verification_to_json(suite) << "\n";
            for (const auto& c : suite.checks) {
                std::printf("[%s] %-28s value=%.4e bound=%.4e %s\n", c.passed ? "PASS" : "FAIL",
                            c.name.c_str(), c.value, c.bound, c.detail.c_str());
            }
            return suite.all_hard_passed ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
