#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace kbl {

// Row-major dense matrix, minimal surface for the solver internals.
struct Matrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}
    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
    double* row(std::size_t i) { return a.data() + i * cols; }
    const double* row(std::size_t i) const { return a.data() + i * cols; }
};

// LU factorization with partial pivoting (in place).
class LuFactor {
public:
    explicit LuFactor(Matrix m);
    void solve(const double* b, double* x) const;
    std::vector<double> solve(const std::vector<double>& b) const;
    void solve_transpose(const double* b, double* x) const;
    double log_abs_det() const;

private:
    Matrix lu_;
    std::vector<std::size_t> piv_;
};

// Eigenvalues of a small real matrix (n <= ~12) by Hessenberg reduction and
// Francis double-shift QR.
std::vector<std::complex<double>> eigenvalues_small(const Matrix& m);

// Right eigenvector for a real eigenvalue via inverse iteration.
std::vector<double> eigenvector_small(const Matrix& m, double lambda, std::uint64_t seed = 12345);

// Gram-Schmidt orthonormalization of the columns given as vectors; returns
// the retained basis (near-dependent columns dropped).
std::vector<std::vector<double>> orthonormalize(const std::vector<std::vector<double>>& v,
                                                double drop_tol = 1e-12);

}  // namespace kbl
