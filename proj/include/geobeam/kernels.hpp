#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

// Data-parallel inner loops used by the hot paths (spatial-hash candidate
// scans, Monte-Carlo cover checks, Legendre recurrences, torus orbit
// batches). Scalar reference implementations plus AVX2 variants selected at
// runtime; the two lanes are equivalence-tested bit-for-bit (no FMA
// contraction in either lane).
namespace geobeam::kernels {

// Points are stored as a structure of arrays: coordinate c of point i lives
// at soa[c * count + i].
struct SoaPoints {
    std::size_t count = 0;
    std::size_t dim = 0;
    std::vector<double> data;

    void reserve(std::size_t n, std::size_t d) {
        dim = d;
        data.reserve(n * d);
    }
    double coord(std::size_t c, std::size_t i) const { return data[c * count + i]; }
};

struct NearestResult {
    std::size_t index;  // first index attaining the minimum; count if empty
    double dist2;
};

struct KernelTable {
    NearestResult (*nearest)(const double* soa, std::size_t count, std::size_t dim,
                             const double* q);
    std::size_t (*count_within)(const double* soa, std::size_t count, std::size_t dim,
                                const double* q, double r2);
    // Legendre P_ell evaluated at many abscissae via the three-term recurrence.
    void (*legendre_p)(int ell, const double* x, std::size_t count, double* out);
    // out[c*count+i] = wrap(base[c] + t[i]*dir[c], period): straight-line torus
    // orbits sampled on a time grid.
    void (*linear_orbit)(const double* base, const double* dir, std::size_t dim,
                         const double* t, std::size_t count, double period, double* out);
    const char* name;
};

const KernelTable& scalar_table();
#if defined(__x86_64__) || defined(_M_X64)
const KernelTable& avx2_table();
bool avx2_supported();
#endif

// Active lane: honors GEOBEAM_SIMD={auto,scalar,avx2}; default picks AVX2
// when the CPU supports it.
const KernelTable& active();
std::string active_lane_name();

inline NearestResult nearest(const double* soa, std::size_t count, std::size_t dim,
                             const double* q) {
    return active().nearest(soa, count, dim, q);
}
inline std::size_t count_within(const double* soa, std::size_t count, std::size_t dim,
                                const double* q, double r2) {
    return active().count_within(soa, count, dim, q, r2);
}
inline void legendre_p(int ell, const double* x, std::size_t count, double* out) {
    active().legendre_p(ell, x, count, out);
}
inline void linear_orbit(const double* base, const double* dir, std::size_t dim,
                         const double* t, std::size_t count, double period, double* out) {
    active().linear_orbit(base, dir, dim, t, count, period, out);
}

}  // namespace geobeam::kernels
