#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "kbl/collision.hpp"
#include "kbl/grids.hpp"
#include "kbl/spectral.hpp"

namespace kbl {

struct PenalizedConfig {
    double u = 0.02;
    double gamma = 0.004;    // penalization / decay rate
    double gamma0 = 0.002;   // reporting rate, must stay below gamma
    double alpha = -1.0;     // penalty coefficients; negative means 2*gamma
    double beta = -1.0;
    double t_horizon = 0.0;  // diagnostic backward window; 0 means 40/nu0
    double tol_lin = 1e-10;
    double tol_nl = 1e-9;
    int max_iter_lin = 6000;
    int max_iter_nl = 80;
    std::string accel = "anderson";  // "anderson" | "plain"
    int anderson_depth = 8;
    // space-marching order of the source refresh within one iteration
    std::string sweep_order = "symmetric";  // "symmetric" | "jacobi"
    int lambda_steps = 0;  // homotopy restart steps on failure (0 = off)
    double eps_max = 0.02; // smallness guard for the boundary amplitude
    int threads = 0;

    double alpha_eff() const { return alpha < 0.0 ? 2.0 * gamma : alpha; }
    double beta_eff() const { return beta < 0.0 ? 2.0 * gamma : beta; }
    double horizon(double nu0) const { return t_horizon > 0.0 ? t_horizon : 40.0 / nu0; }
    void validate(double nu0) const;
};

// Dirichlet data on the inflow side: eps * (base + a1 bump1 + a2 bump2).
// Profiles are reflection-symmetric; the bumps vanish continuously at the
// grazing line and the amplitude box keeps |w f_b| <= eps.
struct BoundaryFamily {
    const VelocityGrid* grid = nullptr;
    double eps = 1e-3;
    double box = 1.2;  // admissible |a1|, |a2|
    std::vector<double> base, bump1, bump2;

    std::vector<double> assemble(double a1, double a2) const;
    double w_sup(double a1, double a2, double theta) const;

    // b = exp(-|xi|^2) at full amplitude, no tuning bumps
    static BoundaryFamily pure_gaussian(const VelocityGrid& grid, double eps);
    // scaled base plus two inflow bumps, for the admissibility tuner
    static BoundaryFamily tunable(const VelocityGrid& grid, double eps, double u,
                                  double theta = 0.125);
};

struct IterationRecord {
    int iter = 0;
    double update = 0.0;
    double ratio = 0.0;
};

struct LinearSolveResult {
    Field g;
    std::vector<IterationRecord> history;
    double final_update = 0.0;
    double fixed_point_residual = 0.0;  // |w (g - G(g))|_inf after convergence
    bool converged = false;
    double lambda_used = 1.0;
    int iterations = 0;
};

struct SolutionBundle {
    double u = 0.0, gamma = 0.0, gamma0 = 0.0, eps = 0.0;
    double a1 = 0.0, a2 = 0.0;
    Field g;
    std::vector<double> h;
    Field f;  // filled by reconstruct_f
    std::vector<double> fb;
    std::vector<IterationRecord> outer_history;
    std::vector<double> m_plus, m_zero, m_psi;  // penalty-moment traces over x
    double w_g_sup = 0.0, h_sup = 0.0;
    bool converged = false;
    bool has_f = false;
};

class TransportContext;

// Direct solve of the penalized system on a logarithmic subset of stations,
// used as a defect correction between fine sweeps.  The coarse system uses
// the same per-cell exponential-integrator relations, assembled as a block
// tridiagonal matrix over full velocity space and factored once.
class CoarseCorrector {
public:
    explicit CoarseCorrector(const TransportContext& ctx);
    bool ready() const { return ready_; }
    std::size_t stations() const { return cs_.size(); }
    void correct(Field& g, const Field& Q, const std::vector<double>& g_b) const;

private:
    struct CellCoef {
        std::vector<double> E, A, B;  // per velocity node
    };

    const TransportContext* ctx_;
    bool ready_ = false;
    std::vector<std::size_t> cs_;  // coarse station indices in the fine grid
    Matrix kp_;                    // dense compact part
    std::vector<CellCoef> cc_;     // coarse cell coefficients
    std::vector<std::unique_ptr<LuFactor>> dlu_;

    void fill_D(std::size_t j, Matrix& D) const;
    void fill_L_row(std::size_t j, std::size_t i, std::vector<double>& row) const;
    void fill_U_row(std::size_t j, std::size_t i, std::vector<double>& row) const;
    std::vector<double> restrict_residual(const Field& g, const Field& Q,
                                          const std::vector<double>& g_b) const;
};

// Assembled state shared by the solver entry points.
class TransportContext {
public:
    TransportContext(const SpatialGrid& xgrid, SpectralSolver& spectral, const GammaEvaluator& gamma,
                     PenalizedConfig cfg);
    ~TransportContext();

    const VelocityGrid& grid() const { return spectral_->grid(); }
    const SpatialGrid& xgrid() const { return *xgrid_; }
    const PenalizedConfig& config() const { return cfg_; }
    SpectralSolver& spectral() const { return *spectral_; }
    const EigenSolution& eigen() const { return *eigen_; }
    const std::vector<double>& nu_bar() const { return nu_bar_; }
    const std::vector<double>& w_table() const { return wtab_; }
    const std::vector<double>& w_tilde_table() const { return wttab_; }

    double w_sup_field(const Field& f) const;  // sup_j,i w |f|
    std::vector<double> gamma_tilde(const std::vector<double>& f, bool even_inputs = true) const;

    // penalized compact part: Ktilde g - alpha P+((xi1+u) g) - beta p_u g
    std::vector<double> apply_Kp(const std::vector<double>& g) const;

    // coarse-grid defect correction toward the fine penalized solution; the
    // long-wavelength moment content relaxes far too slowly under sweeps
    // alone, so a direct block-tridiagonal solve on a logarithmic station
    // subset removes it each iteration
    const CoarseCorrector* coarse() const;
    friend class CoarseCorrector;

private:
    const SpatialGrid* xgrid_;
    SpectralSolver* spectral_;
    const GammaEvaluator* gamma_;
    const EigenSolution* eigen_;
    PenalizedConfig cfg_;
    std::vector<double> nu_bar_, wtab_, wttab_;
    mutable std::unique_ptr<CoarseCorrector> coarse_;
};

// Characteristic sweep of the damped transport equation: exact per-cell
// exponential integration with a linear source, inflow from x = 0 on the
// right-moving channels and from the far closure on the left-moving ones.
Field transport_sweep(const VelocityGrid& grid, const SpatialGrid& xgrid,
                      const std::vector<double>& nu_bar, double u, const Field& Q,
                      const std::vector<double>& g_b, const std::vector<double>* g_far = nullptr,
                      int threads = 0);

LinearSolveResult solve_linear_penalized(const TransportContext& ctx, const Field& Q,
                                         const std::vector<double>& g_b,
                                         const Field* warm_start = nullptr);

// single application of the fixed-point map (exposed for convergence
// diagnostics): lagged source, or the symmetric space-marching refresh
Field penalized_iteration(const TransportContext& ctx, const Field& g, const Field& Q,
                          const std::vector<double>& g_b, const std::string& order);

// h(x) = -e^{-gamma x} int_0^inf e^{(tau-2gamma) z} Gpsi(x+z) dz with the
// tail closed by constant extension of the integrand's slow factor.
std::vector<double> compute_h(const TransportContext& ctx, const std::vector<double>& gpsi);
// identity form of the derivative: (gamma - tau) h + e^{-gamma x} Gpsi
std::vector<double> dx_h_identity(const TransportContext& ctx, const std::vector<double>& h,
                                  const std::vector<double>& gpsi);

SolutionBundle solve_nonlinear_penalized(const TransportContext& ctx, const std::vector<double>& fb,
                                         const SolutionBundle* warm_start = nullptr);

struct TuneResult {
    double a1 = 0.0, a2 = 0.0;
    std::array<double, 2> residual{0.0, 0.0};
    double jacobian_cond = 0.0;
    int newton_steps = 0;
    bool converged = false;
    SolutionBundle bundle;
};

TuneResult tune_boundary(const TransportContext& ctx, const BoundaryFamily& family,
                         const AdmissibilityData& adm, double tol = 1e-9, int max_steps = 8,
                         const SolutionBundle* warm_start = nullptr);

void reconstruct_f(const TransportContext& ctx, SolutionBundle& bundle);

struct ResidualReport {
    double w_sup = 0.0;
    double w_l2 = 0.0;
};
// finite-difference residual of the original equation on the reconstructed
// solution, interior stations only
ResidualReport residual_check(const TransportContext& ctx, const Field& f);

void save_bundle(const std::string& dir, const TransportContext& ctx, const SolutionBundle& b);

}  // namespace kbl
