#include "geobeam/kernels.hpp"

#include <cmath>
#include <limits>

// Reference lane. Compiled with -ffp-contract=off so that the AVX2 lane
// (which also avoids FMA) produces bit-identical results.
namespace geobeam::kernels {
namespace {

NearestResult nearest_scalar(const double* soa, std::size_t count, std::size_t dim,
                             const double* q) {
    NearestResult best{count, std::numeric_limits<double>::infinity()};
    for (std::size_t i = 0; i < count; ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dim; ++c) {
            const double d = soa[c * count + i] - q[c];
            acc += d * d;
        }
        if (acc < best.dist2) {
            best.dist2 = acc;
            best.index = i;
        }
    }
    return best;
}

std::size_t count_within_scalar(const double* soa, std::size_t count, std::size_t dim,
                                const double* q, double r2) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < count; ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dim; ++c) {
            const double d = soa[c * count + i] - q[c];
            acc += d * d;
        }
        if (acc <= r2) ++hits;
    }
    return hits;
}

void legendre_scalar(int ell, const double* x, std::size_t count, double* out) {
    if (ell == 0) {
        for (std::size_t i = 0; i < count; ++i) out[i] = 1.0;
        return;
    }
    for (std::size_t i = 0; i < count; ++i) {
        double pm1 = 1.0;       // P_0
        double p = x[i];        // P_1
        for (int k = 2; k <= ell; ++k) {
            const double a = (2.0 * k - 1.0) / k;
            const double b = (k - 1.0) / k;
            const double next = a * x[i] * p - b * pm1;
            pm1 = p;
            p = next;
        }
        out[i] = p;
    }
}

void linear_orbit_scalar(const double* base, const double* dir, std::size_t dim,
                         const double* t, std::size_t count, double period, double* out) {
    const double inv_period = 1.0 / period;
    for (std::size_t c = 0; c < dim; ++c) {
        const double b = base[c];
        const double d = dir[c];
        double* row = out + c * count;
        for (std::size_t i = 0; i < count; ++i) {
            const double v = b + t[i] * d;
            double w = v - std::floor(v * inv_period) * period;
            if (w >= period) w -= period;  // guard against floor rounding at the seam
            row[i] = w;
        }
    }
}

}  // namespace

const KernelTable& scalar_table() {
    static const KernelTable table{nearest_scalar, count_within_scalar, legendre_scalar,
                                   linear_orbit_scalar, "scalar"};
    return table;
}

}  // namespace geobeam::kernels
