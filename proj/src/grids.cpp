#include "kbl/grids.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "kbl/simd.hpp"

namespace kbl {

namespace {

// Gauss-Hermite nodes/weights for weight exp(-t^2) by Newton iteration on the
// recurrence, then rescaled to the weight exp(-xi^2/2) (nodes *= sqrt(2),
// weights carry the inverse density so that sum w f(xi) ~ int f dxi).
void gauss_hermite_axis(int n, std::vector<double>& nodes, std::vector<double>& weights) {
    nodes.assign(n, 0.0);
    weights.assign(n, 0.0);
    const double pim4 = 0.7511255444649425;  // pi^{-1/4}
    int m = (n + 1) / 2;
    double z = 0.0;
    for (int i = 0; i < m; ++i) {
        if (i == 0) {
            z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -0.16667);
        } else if (i == 1) {
            z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
        } else if (i == 2) {
            z = 1.86 * z - 0.86 * nodes[0];
        } else if (i == 3) {
            z = 1.91 * z - 0.91 * nodes[1];
        } else {
            z = 2.0 * z - nodes[i - 2];
        }
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p1 = pim4, p2 = 0.0;
            for (int j = 0; j < n; ++j) {
                double p3 = p2;
                p2 = p1;
                p1 = z * std::sqrt(2.0 / (j + 1.0)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1.0)) * p3;
            }
            pp = std::sqrt(2.0 * n) * p2;
            double dz = p1 / pp;
            z -= dz;
            if (std::fabs(dz) < 1e-15) break;
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    // nodes are in descending |z| for the first half; sort ascending.
    std::vector<std::size_t> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return nodes[a] < nodes[b]; });
    std::vector<double> ns(n), ws(n);
    for (int i = 0; i < n; ++i) {
        ns[i] = nodes[idx[i]];
        ws[i] = weights[idx[i]];
    }
    for (int i = 0; i < n; ++i) {
        // rescale from weight exp(-t^2) to plain dxi integration
        double xi = ns[i] * std::sqrt(2.0);
        nodes[i] = xi;
        weights[i] = ws[i] * std::sqrt(2.0) * std::exp(ns[i] * ns[i]);
    }
}

}  // namespace

VelocityScheme velocity_scheme_from_string(const std::string& s) {
    if (s == "uniform") return VelocityScheme::Uniform;
    if (s == "gauss") return VelocityScheme::Gauss;
    throw std::invalid_argument("velocity scheme must be 'uniform' or 'gauss', got '" + s + "'");
}

VelocityGrid build_velocity_grid(double radius, int n_per_axis, VelocityScheme scheme) {
    if (radius <= 0.0) throw std::invalid_argument("velocity grid: radius must be positive");
    if (n_per_axis < 4) throw std::invalid_argument("velocity grid: need at least 4 nodes per axis");
    if (n_per_axis % 2 != 0) {
        throw std::invalid_argument(
            "velocity grid: per-axis count must be even; an odd count places a node on the "
            "xi1 + u = 0 grazing set for small u");
    }

    VelocityGrid g;
    g.scheme = scheme;
    g.radius = radius;
    g.n_per_axis = n_per_axis;
    g.axis.resize(n_per_axis);
    g.axis_weight.resize(n_per_axis);

    if (scheme == VelocityScheme::Uniform) {
        // Cell-centered composite midpoint rule: spectrally accurate for
        // smooth rapidly decaying integrands.
        double h = 2.0 * radius / n_per_axis;
        for (int i = 0; i < n_per_axis; ++i) {
            g.axis[i] = -radius + (i + 0.5) * h;
            g.axis_weight[i] = h;
        }
    } else {
        gauss_hermite_axis(n_per_axis, g.axis, g.axis_weight);
    }

    std::size_t n = static_cast<std::size_t>(n_per_axis);
    std::size_t total = n * n * n;
    g.xi1.resize(total);
    g.xi2.resize(total);
    g.xi3.resize(total);
    g.q.resize(total);
    g.reflect.resize(total);
    for (int i1 = 0; i1 < n_per_axis; ++i1) {
        for (int i2 = 0; i2 < n_per_axis; ++i2) {
            for (int i3 = 0; i3 < n_per_axis; ++i3) {
                std::size_t id = g.index(i1, i2, i3);
                g.xi1[id] = g.axis[i1];
                g.xi2[id] = g.axis[i2];
                g.xi3[id] = g.axis[i3];
                g.q[id] = g.axis_weight[i1] * g.axis_weight[i2] * g.axis_weight[i3];
                g.reflect[id] = g.index(i1, n_per_axis - 1 - i2, n_per_axis - 1 - i3);
            }
        }
    }
    return g;
}

double VelocityGrid::inner(const std::vector<double>& a, const std::vector<double>& b) const {
    return simd::dot3(q.data(), a.data(), b.data(), size());
}

double VelocityGrid::inner3(const std::vector<double>& a, const std::vector<double>& b,
                            const std::vector<double>& c) const {
    double s = 0.0;
    const std::size_t n = size();
    for (std::size_t i = 0; i < n; ++i) s += q[i] * a[i] * b[i] * c[i];
    return s;
}

void VelocityGrid::check_grazing(double u, double guard) const {
    for (std::size_t i = 0; i < size(); ++i) {
        if (std::fabs(xi1[i] + u) < guard) {
            throw std::runtime_error("velocity grid: node " + std::to_string(i) +
                                     " sits on the grazing set xi1 + u = 0 for u = " + std::to_string(u));
        }
    }
}

double VelocityGrid::interpolate(const std::vector<double>& f, double x1, double x2, double x3) const {
    const int n = n_per_axis;
    auto locate = [&](double v, int& i0, double& t) -> bool {
        if (v < axis.front() || v > axis.back()) return false;
        auto it = std::upper_bound(axis.begin(), axis.end(), v);
        int hi = static_cast<int>(it - axis.begin());
        if (hi == 0) {
            i0 = 0;
            t = 0.0;
            return true;
        }
        if (hi >= n) {
            i0 = n - 2;
            t = 1.0;
            return true;
        }
        i0 = hi - 1;
        t = (v - axis[i0]) / (axis[i0 + 1] - axis[i0]);
        return true;
    };
    int a0, b0, c0;
    double ta, tb, tc;
    if (!locate(x1, a0, ta) || !locate(x2, b0, tb) || !locate(x3, c0, tc)) return 0.0;
    double out = 0.0;
    for (int da = 0; da < 2; ++da) {
        double wa = da ? ta : 1.0 - ta;
        if (wa == 0.0) continue;
        for (int db = 0; db < 2; ++db) {
            double wb = db ? tb : 1.0 - tb;
            if (wb == 0.0) continue;
            for (int dc = 0; dc < 2; ++dc) {
                double wc = dc ? tc : 1.0 - tc;
                if (wc == 0.0) continue;
                out += wa * wb * wc * f[index(a0 + da, b0 + db, c0 + dc)];
            }
        }
    }
    return out;
}

SpatialGrid build_spatial_grid(double L, int n_points, double grade, double min_cell) {
    if (L <= 0.0) throw std::invalid_argument("spatial grid: L must be positive");
    if (n_points < 8) throw std::invalid_argument("spatial grid: need at least 8 points");
    if (grade <= 1.0) throw std::invalid_argument("spatial grid: grading ratio must exceed 1");
    if (min_cell <= 0.0 || min_cell >= L) throw std::invalid_argument("spatial grid: bad min cell");

    const int n_cells = n_points - 1;
    // Cells grow geometrically from min_cell until they reach a cap, then run
    // uniform.  The cap is chosen so the grid lands on L with exactly n_cells.
    auto cells_needed = [&](double cap) -> long {
        double x = 0.0, h = min_cell;
        long cnt = 0;
        while (h < cap && x + h < L) {
            x += h;
            h *= grade;
            ++cnt;
            if (cnt > 100000) return cnt;
        }
        if (x + h >= L && h < cap) return cnt + 1;
        return cnt + static_cast<long>(std::ceil((L - x) / cap));
    };
    double lo = min_cell, hi = L;
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        if (cells_needed(mid) > n_cells) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    double cap = hi;

    SpatialGrid s;
    s.L = L;
    s.x.reserve(n_points);
    s.x.push_back(0.0);
    double h = min_cell;
    while (static_cast<int>(s.x.size()) < n_points - 1 && s.x.back() + h < L) {
        s.x.push_back(s.x.back() + h);
        h = std::min(h * grade, cap);
    }
    // Stretch the uniform tail so the last point is exactly L.
    std::size_t tail_start = s.x.size() - 1;
    int remaining = n_points - static_cast<int>(s.x.size());
    if (remaining <= 0) {
        s.x.back() = L;
    } else {
        double x0 = s.x[tail_start];
        double step = (L - x0) / remaining;
        for (int k = 1; k <= remaining; ++k) s.x.push_back(x0 + k * step);
        s.x.back() = L;
    }
    for (std::size_t i = 1; i < s.x.size(); ++i) {
        if (s.x[i] <= s.x[i - 1]) throw std::runtime_error("spatial grid: non-increasing nodes");
    }
    return s;
}

void WeightParams::validate() const {
    if (!(theta >= 0.0 && theta < 0.25)) {
        throw std::invalid_argument("weights: theta must lie in [0, 1/4); theta >= 1/4 breaks the "
                                    "weighted kernel integrability");
    }
    if (!(theta_tilde > 0.0 && theta_tilde <= theta / 8.0)) {
        throw std::invalid_argument("weights: theta_tilde must satisfy 0 < theta_tilde <= theta/8");
    }
}

double w_weight(const std::array<double, 3>& xi, double theta) {
    if (!(theta >= 0.0 && theta < 0.25)) {
        throw std::invalid_argument("w_weight: theta must lie in [0, 1/4)");
    }
    double s2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
    return std::exp(theta * s2);
}

std::vector<double> w_weight_table(const VelocityGrid& grid, double theta) {
    if (!(theta >= 0.0 && theta < 0.25)) {
        throw std::invalid_argument("w_weight: theta must lie in [0, 1/4)");
    }
    std::vector<double> w(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) w[i] = std::exp(theta * grid.speed2(i));
    return w;
}

double maxwellian(double rho, double u, double T, const std::array<double, 3>& v) {
    if (rho <= 0.0) throw std::invalid_argument("maxwellian: rho must be positive");
    if (T <= 0.0) throw std::invalid_argument("maxwellian: T must be positive");
    double e = (v[0] - u) * (v[0] - u) + v[1] * v[1] + v[2] * v[2];
    return rho * std::pow(2.0 * M_PI * T, -1.5) * std::exp(-e / (2.0 * T));
}

std::vector<double> maxwellian_table(const VelocityGrid& grid) {
    std::vector<double> m(grid.size());
    const double c = std::pow(2.0 * M_PI, -1.5);
    for (std::size_t i = 0; i < grid.size(); ++i) m[i] = c * std::exp(-0.5 * grid.speed2(i));
    return m;
}

std::vector<double> sqrt_maxwellian_table(const VelocityGrid& grid) {
    std::vector<double> m(grid.size());
    const double c = std::pow(2.0 * M_PI, -0.75);
    for (std::size_t i = 0; i < grid.size(); ++i) m[i] = c * std::exp(-0.25 * grid.speed2(i));
    return m;
}

std::vector<double> symmetrize_reflection(const VelocityGrid& grid, const std::vector<double>& f) {
    std::vector<double> out(f.size());
    for (std::size_t i = 0; i < grid.size(); ++i) out[i] = 0.5 * (f[i] + f[grid.reflect[i]]);
    return out;
}

void symmetrize_reflection_inplace(const VelocityGrid& grid, std::vector<double>& f) {
    for (std::size_t i = 0; i < grid.size(); ++i) {
        std::size_t j = grid.reflect[i];
        if (j > i) {
            double avg = 0.5 * (f[i] + f[j]);
            f[i] = avg;
            f[j] = avg;
        } else if (j == i) {
            // node on the symmetry axis, nothing to do
        }
    }
}

}  // namespace kbl
