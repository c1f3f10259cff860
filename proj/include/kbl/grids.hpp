#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace kbl {

// A sample on the space x velocity grid, row-major [station][node].
struct Field {
    std::size_t nx = 0;
    std::size_t nv = 0;
    std::vector<double> data;

    Field() = default;
    Field(std::size_t nx_, std::size_t nv_) : nx(nx_), nv(nv_), data(nx_ * nv_, 0.0) {}
    double* station(std::size_t j) { return data.data() + j * nv; }
    const double* station(std::size_t j) const { return data.data() + j * nv; }
    double& at(std::size_t j, std::size_t i) { return data[j * nv + i]; }
    double at(std::size_t j, std::size_t i) const { return data[j * nv + i]; }
};

enum class VelocityScheme { Uniform, Gauss };

// Truncated 3-D velocity grid with tensor structure.  Nodes are closed under
// the reflection (xi1, xi2, xi3) -> (xi1, -xi2, -xi3); `reflect[i]` is the
// index of the mirrored node.
struct VelocityGrid {
    VelocityScheme scheme = VelocityScheme::Uniform;
    double radius = 0.0;   // truncation radius per axis
    int n_per_axis = 0;
    std::vector<double> axis;        // per-axis coordinates (shared by all 3 axes)
    std::vector<double> axis_weight; // per-axis quadrature weights
    std::vector<double> xi1, xi2, xi3;  // node coordinates, SoA
    std::vector<double> q;              // node quadrature weights
    std::vector<std::size_t> reflect;   // reflection permutation

    std::size_t size() const { return q.size(); }
    std::array<double, 3> node(std::size_t i) const { return {xi1[i], xi2[i], xi3[i]}; }
    double speed2(std::size_t i) const { return xi1[i] * xi1[i] + xi2[i] * xi2[i] + xi3[i] * xi3[i]; }
    std::size_t index(int i1, int i2, int i3) const {
        return (static_cast<std::size_t>(i1) * n_per_axis + i2) * n_per_axis + i3;
    }

    // sum_i q_i a_i b_i and sum_i q_i a_i b_i c_i
    double inner(const std::vector<double>& a, const std::vector<double>& b) const;
    double inner3(const std::vector<double>& a, const std::vector<double>& b,
                  const std::vector<double>& c) const;

    // Fails if any node has |xi1 + u| below the grazing guard.
    void check_grazing(double u, double guard = 1e-12) const;

    // Trilinear interpolation of a node field at an arbitrary point;
    // zero outside the truncated box.
    double interpolate(const std::vector<double>& f, double x1, double x2, double x3) const;
};

// Quadrature exactness: the uniform scheme is a cell-centered composite
// midpoint rule, spectrally accurate for smooth integrands whose derivatives
// vanish at the truncation boundary (Gaussian-weighted moments); the gauss
// scheme uses per-axis Gauss-Hermite nodes for the weight e^{-xi^2/2}, exact
// for polynomial x Maxwellian integrands up to degree 2 n_per_axis - 1 per
// axis.  An even per-axis count keeps every node off the xi1 + u = 0
// grazing set for small drifts.
VelocityGrid build_velocity_grid(double radius, int n_per_axis, VelocityScheme scheme);
VelocityScheme velocity_scheme_from_string(const std::string& s);

// 1-D spatial grid on [0, L], geometrically graded toward x = 0.
struct SpatialGrid {
    std::vector<double> x;
    double L = 0.0;

    std::size_t size() const { return x.size(); }
    double dx(std::size_t cell) const { return x[cell + 1] - x[cell]; }
};

SpatialGrid build_spatial_grid(double L, int n_points, double grade, double min_cell);

// Exponential velocity weight exp(theta |xi|^2); theta < 1/4 keeps the
// weighted kernel integrable.
struct WeightParams {
    double theta = 0.125;
    double theta_tilde = 0.015625;
    void validate() const;
};

double w_weight(const std::array<double, 3>& xi, double theta);
std::vector<double> w_weight_table(const VelocityGrid& grid, double theta);

double maxwellian(double rho, double u, double T, const std::array<double, 3>& v);
std::vector<double> maxwellian_table(const VelocityGrid& grid);        // M(xi)
std::vector<double> sqrt_maxwellian_table(const VelocityGrid& grid);   // sqrt(M)(xi)

// Projection of a node field onto its reflection-even part; idempotent.
std::vector<double> symmetrize_reflection(const VelocityGrid& grid, const std::vector<double>& f);
void symmetrize_reflection_inplace(const VelocityGrid& grid, std::vector<double>& f);

}  // namespace kbl
