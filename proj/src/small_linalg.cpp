#include "kbl/small_linalg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "kbl/numerics.hpp"
#include "kbl/simd.hpp"

namespace kbl {

LuFactor::LuFactor(Matrix m) : lu_(std::move(m)), piv_(lu_.rows) {
    if (lu_.rows != lu_.cols) throw std::invalid_argument("LuFactor: square matrix required");
    const std::size_t n = lu_.rows;
    for (std::size_t i = 0; i < n; ++i) piv_[i] = i;
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t p = k;
        double best = std::fabs(lu_(k, k));
        for (std::size_t i = k + 1; i < n; ++i) {
            double v = std::fabs(lu_(i, k));
            if (v > best) {
                best = v;
                p = i;
            }
        }
        if (best == 0.0) throw std::runtime_error("LuFactor: singular matrix");
        if (p != k) {
            for (std::size_t j = 0; j < n; ++j) std::swap(lu_(k, j), lu_(p, j));
            std::swap(piv_[k], piv_[p]);
        }
        const double inv = 1.0 / lu_(k, k);
        const double* rk = lu_.row(k) + k + 1;
        const std::size_t tail = n - k - 1;
        // Elimination below the pivot; the row updates are the hot loop.
        parallel_for(tail, (tail > 256 ? 0 : 1), [&](std::size_t lo, std::size_t hi) {
            for (std::size_t r = lo; r < hi; ++r) {
                std::size_t i = k + 1 + r;
                double l = lu_(i, k) * inv;
                lu_(i, k) = l;
                if (l != 0.0) simd::axpy(-l, rk, lu_.row(i) + k + 1, tail);
            }
        });
    }
}

void LuFactor::solve(const double* b, double* x) const {
    const std::size_t n = lu_.rows;
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = b[piv_[i]];
    for (std::size_t i = 1; i < n; ++i) {
        y[i] -= simd::dot(lu_.row(i), y.data(), i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double s = y[ii] - simd::dot(lu_.row(ii) + ii + 1, y.data() + ii + 1, n - ii - 1);
        y[ii] = s / lu_(ii, ii);
    }
    std::copy(y.begin(), y.end(), x);
}

std::vector<double> LuFactor::solve(const std::vector<double>& b) const {
    std::vector<double> x(b.size());
    solve(b.data(), x.data());
    return x;
}

void LuFactor::solve_transpose(const double* b, double* x) const {
    // A = P^T L U, so A^T w = b is solved by U^T v = b, L^T w = v, x = P^T w
    const std::size_t n = lu_.rows;
    std::vector<double> v(b, b + n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = v[i];
        for (std::size_t k = 0; k < i; ++k) s -= lu_(k, i) * v[k];
        v[i] = s / lu_(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double s = v[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= lu_(k, ii) * v[k];
        v[ii] = s;
    }
    for (std::size_t i = 0; i < n; ++i) x[piv_[i]] = v[i];
}

double LuFactor::log_abs_det() const {
    double s = 0.0;
    for (std::size_t i = 0; i < lu_.rows; ++i) s += std::log(std::fabs(lu_(i, i)));
    return s;
}

namespace {

void hessenberg(Matrix& a) {
    const std::size_t n = a.rows;
    if (n < 3) return;
    for (std::size_t m = 1; m + 1 < n; ++m) {
        std::size_t p = m;
        double big = std::fabs(a(m, m - 1));
        for (std::size_t i = m + 1; i < n; ++i) {
            if (std::fabs(a(i, m - 1)) > big) {
                big = std::fabs(a(i, m - 1));
                p = i;
            }
        }
        if (p != m) {
            for (std::size_t j = 0; j < n; ++j) std::swap(a(p, j), a(m, j));
            for (std::size_t i = 0; i < n; ++i) std::swap(a(i, p), a(i, m));
        }
        if (a(m, m - 1) == 0.0) continue;
        for (std::size_t i = m + 1; i < n; ++i) {
            double y = a(i, m - 1) / a(m, m - 1);
            if (y == 0.0) continue;
            for (std::size_t j = m - 1; j < n; ++j) a(i, j) -= y * a(m, j);
            for (std::size_t j = 0; j < n; ++j) a(j, m) += y * a(j, i);
        }
    }
    for (std::size_t i = 2; i < n; ++i) {
        for (std::size_t j = 0; j + 1 < i; ++j) a(i, j) = 0.0;
    }
}

inline double sign_of(double a, double b) { return b >= 0.0 ? std::fabs(a) : -std::fabs(a); }

// Francis double-shift QR on an upper Hessenberg matrix.
std::vector<std::complex<double>> hqr(Matrix a) {
    const long n = static_cast<long>(a.rows);
    std::vector<std::complex<double>> eig;
    if (n == 0) return eig;
    double anorm = 0.0;
    for (long i = 0; i < n; ++i)
        for (long j = std::max<long>(i - 1, 0); j < n; ++j) anorm += std::fabs(a(i, j));
    if (anorm == 0.0) anorm = 1.0;

    long nn = n - 1;
    double t = 0.0;
    while (nn >= 0) {
        long its = 0;
        long l = 0;
        do {
            for (l = nn; l >= 1; --l) {
                double s = std::fabs(a(l - 1, l - 1)) + std::fabs(a(l, l));
                if (s == 0.0) s = anorm;
                if (std::fabs(a(l, l - 1)) + s == s || std::fabs(a(l, l - 1)) <= 1e-16 * s) {
                    a(l, l - 1) = 0.0;
                    break;
                }
            }
            double x = a(nn, nn);
            if (l == nn) {
                eig.emplace_back(x + t, 0.0);
                --nn;
                break;
            }
            double y = a(nn - 1, nn - 1);
            double w = a(nn, nn - 1) * a(nn - 1, nn);
            if (l == nn - 1) {
                double p = 0.5 * (y - x);
                double q = p * p + w;
                double z = std::sqrt(std::fabs(q));
                x += t;
                if (q >= 0.0) {
                    z = p + sign_of(z, p);
                    eig.emplace_back(x + z, 0.0);
                    eig.emplace_back(z != 0.0 ? x - w / z : x + z, 0.0);
                } else {
                    eig.emplace_back(x + p, z);
                    eig.emplace_back(x + p, -z);
                }
                nn -= 2;
                break;
            }
            if (its == 60) throw std::runtime_error("eigenvalues_small: QR failed to converge");
            if (its == 10 || its == 20) {
                t += x;
                for (long i = 0; i <= nn; ++i) a(i, i) -= x;
                double s = std::fabs(a(nn, nn - 1)) + std::fabs(a(nn - 1, nn - 2));
                y = x = 0.75 * s;
                w = -0.4375 * s * s;
            }
            ++its;
            long m;
            double p = 0.0, q = 0.0, r = 0.0;
            for (m = nn - 2; m >= l; --m) {
                double z = a(m, m);
                double rr = x - z;
                double ss = y - z;
                p = (rr * ss - w) / a(m + 1, m) + a(m, m + 1);
                q = a(m + 1, m + 1) - z - rr - ss;
                r = a(m + 2, m + 1);
                double s = std::fabs(p) + std::fabs(q) + std::fabs(r);
                p /= s;
                q /= s;
                r /= s;
                if (m == l) break;
                double u = std::fabs(a(m, m - 1)) * (std::fabs(q) + std::fabs(r));
                double v = std::fabs(p) * (std::fabs(a(m - 1, m - 1)) + std::fabs(a(m, m)) +
                                           std::fabs(a(m + 1, m + 1)));
                if (u + v == v || u <= 1e-16 * v) break;
            }
            for (long i = m + 2; i <= nn; ++i) {
                a(i, i - 2) = 0.0;
                if (i != m + 2) a(i, i - 3) = 0.0;
            }
            for (long k = m; k <= nn - 1; ++k) {
                double xh = 0.0;
                if (k != m) {
                    p = a(k, k - 1);
                    q = a(k + 1, k - 1);
                    r = (k != nn - 1) ? a(k + 2, k - 1) : 0.0;
                    xh = std::fabs(p) + std::fabs(q) + std::fabs(r);
                    if (xh != 0.0) {
                        p /= xh;
                        q /= xh;
                        r /= xh;
                    }
                }
                double s = sign_of(std::sqrt(p * p + q * q + r * r), p);
                if (s == 0.0) continue;
                if (k == m) {
                    if (l != m) a(k, k - 1) = -a(k, k - 1);
                } else {
                    a(k, k - 1) = -s * xh;
                }
                p += s;
                double px = p / s, py = q / s, pz = r / s;
                q /= p;
                r /= p;
                for (long j = k; j <= nn; ++j) {
                    double pp = a(k, j) + q * a(k + 1, j);
                    if (k != nn - 1) {
                        pp += r * a(k + 2, j);
                        a(k + 2, j) -= pp * pz;
                    }
                    a(k + 1, j) -= pp * py;
                    a(k, j) -= pp * px;
                }
                long mmin = std::min(nn, k + 3);
                for (long i = l; i <= mmin; ++i) {
                    double pp = px * a(i, k) + py * a(i, k + 1);
                    if (k != nn - 1) {
                        pp += pz * a(i, k + 2);
                        a(i, k + 2) -= pp * r;
                    }
                    a(i, k + 1) -= pp * q;
                    a(i, k) -= pp;
                }
            }
        } while (l < nn - 1);
    }
    return eig;
}

}  // namespace

std::vector<std::complex<double>> eigenvalues_small(const Matrix& m) {
    if (m.rows != m.cols) throw std::invalid_argument("eigenvalues_small: square matrix required");
    Matrix a = m;
    hessenberg(a);
    return hqr(std::move(a));
}

std::vector<double> eigenvector_small(const Matrix& m, double lambda, std::uint64_t seed) {
    const std::size_t n = m.rows;
    Matrix shifted = m;
    double scale = 0.0;
    for (double v : m.a) scale = std::max(scale, std::fabs(v));
    if (scale == 0.0) scale = 1.0;
    for (std::size_t i = 0; i < n; ++i) shifted(i, i) -= lambda + 1e-13 * scale;
    LuFactor lu(shifted);
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    for (int it = 0; it < 6; ++it) {
        std::vector<double> y = lu.solve(v);
        double norm = std::sqrt(simd::dot(y.data(), y.data(), n));
        for (auto& x : y) x /= norm;
        v = std::move(y);
    }
    return v;
}

std::vector<std::vector<double>> orthonormalize(const std::vector<std::vector<double>>& v,
                                                double drop_tol) {
    std::vector<std::vector<double>> basis;
    for (const auto& col : v) {
        std::vector<double> w = col;
        const std::size_t n = w.size();
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto& b : basis) {
                double c = simd::dot(b.data(), w.data(), n);
                simd::axpy(-c, b.data(), w.data(), n);
            }
        }
        double norm = std::sqrt(simd::dot(w.data(), w.data(), n));
        double orig = std::sqrt(simd::dot(col.data(), col.data(), n));
        if (orig == 0.0 || norm <= drop_tol * orig) continue;
        for (auto& x : w) x /= norm;
        basis.push_back(std::move(w));
    }
    return basis;
}

}  // namespace kbl
