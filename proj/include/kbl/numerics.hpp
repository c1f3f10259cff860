#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace kbl {

// Static-partition parallel map.  Chunk boundaries depend only on (n, nthreads),
// and callers combine per-chunk results in index order, so reductions stay
// deterministic for a fixed thread count.
void parallel_for(std::size_t n, int nthreads, const std::function<void(std::size_t, std::size_t)>& body);

int default_threads();
void set_default_threads(int n);

// Adaptive Simpson on [a,b].
double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                        double tol = 1e-10, int max_depth = 40);

// Gauss-Legendre nodes/weights on [-1,1], n <= 16.
void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w);

// Mean of 1/|c + d| over a ball of radius rc centered at offset |c| = d from
// the singularity; exact for the Newtonian kernel.  Used to regularize the
// integrable 1/|xi - xi'| singularity on a quadrature cell of equal volume.
double cell_averaged_inv_r(double dist, double rc);

// Least-squares slope/intercept of y against x.
struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
};
LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

// splitmix64-seeded xoshiro256** with uniform/normal helpers.  Fixed seed ->
// fixed stream, independent of platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed);
    std::uint64_t next_u64();
    double uniform();                      // [0,1)
    double uniform(double a, double b);
    double normal();                       // standard normal (polar method)
private:
    std::uint64_t s_[4];
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a content hash, used to key operator caches to their configuration.
std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL);
std::uint64_t fnv1a_str(const std::string& s, std::uint64_t h = 1469598103934665603ULL);

}  // namespace kbl
