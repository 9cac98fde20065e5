#if defined(__x86_64__) || defined(_M_X64)

#include "geobeam/kernels.hpp"

#include <immintrin.h>

#include <cmath>
#include <limits>

// AVX2 lane. Deliberately mul+add (no FMA) so results match the scalar lane
// bit-for-bit; the win comes from processing four points per vector, not from
// contraction.
namespace geobeam::kernels {
namespace {

inline __m256d dist2_block(const double* soa, std::size_t count, std::size_t dim,
                           const double* q, std::size_t i) {
    __m256d acc = _mm256_setzero_pd();
    for (std::size_t c = 0; c < dim; ++c) {
        const __m256d p = _mm256_loadu_pd(soa + c * count + i);
        const __m256d d = _mm256_sub_pd(p, _mm256_set1_pd(q[c]));
        acc = _mm256_add_pd(acc, _mm256_mul_pd(d, d));
    }
    return acc;
}

NearestResult nearest_avx2(const double* soa, std::size_t count, std::size_t dim,
                           const double* q) {
    NearestResult best{count, std::numeric_limits<double>::infinity()};
    std::size_t i = 0;
    if (count >= 4) {
        alignas(32) double lane_best[4];
        alignas(32) std::int64_t lane_idx[4];
        __m256d vbest = _mm256_set1_pd(std::numeric_limits<double>::infinity());
        __m256i vidx = _mm256_set1_epi64x(-1);
        __m256i cur = _mm256_setr_epi64x(0, 1, 2, 3);
        const __m256i four = _mm256_set1_epi64x(4);
        for (; i + 4 <= count; i += 4) {
            const __m256d acc = dist2_block(soa, count, dim, q, i);
            const __m256d lt = _mm256_cmp_pd(acc, vbest, _CMP_LT_OQ);
            vbest = _mm256_blendv_pd(vbest, acc, lt);
            vidx = _mm256_blendv_epi8(vidx, cur, _mm256_castpd_si256(lt));
            cur = _mm256_add_epi64(cur, four);
        }
        _mm256_store_pd(lane_best, vbest);
        _mm256_store_si256(reinterpret_cast<__m256i*>(lane_idx), vidx);
        for (int l = 0; l < 4; ++l) {
            if (lane_idx[l] < 0) continue;
            const auto idx = static_cast<std::size_t>(lane_idx[l]);
            if (lane_best[l] < best.dist2 ||
                (lane_best[l] == best.dist2 && idx < best.index)) {
                best.dist2 = lane_best[l];
                best.index = idx;
            }
        }
    }
    for (; i < count; ++i) {
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

std::size_t count_within_avx2(const double* soa, std::size_t count, std::size_t dim,
                              const double* q, double r2) {
    std::size_t hits = 0;
    std::size_t i = 0;
    const __m256d vr2 = _mm256_set1_pd(r2);
    for (; i + 4 <= count; i += 4) {
        const __m256d acc = dist2_block(soa, count, dim, q, i);
        const __m256d le = _mm256_cmp_pd(acc, vr2, _CMP_LE_OQ);
        hits += static_cast<std::size_t>(__builtin_popcount(_mm256_movemask_pd(le)));
    }
    for (; i < count; ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dim; ++c) {
            const double d = soa[c * count + i] - q[c];
            acc += d * d;
        }
        if (acc <= r2) ++hits;
    }
    return hits;
}

void legendre_avx2(int ell, const double* x, std::size_t count, double* out) {
    if (ell == 0) {
        for (std::size_t i = 0; i < count; ++i) out[i] = 1.0;
        return;
    }
    std::size_t i = 0;
    for (; i + 4 <= count; i += 4) {
        const __m256d xv = _mm256_loadu_pd(x + i);
        __m256d pm1 = _mm256_set1_pd(1.0);
        __m256d p = xv;
        for (int k = 2; k <= ell; ++k) {
            const __m256d a = _mm256_set1_pd((2.0 * k - 1.0) / k);
            const __m256d b = _mm256_set1_pd((k - 1.0) / k);
            const __m256d next = _mm256_sub_pd(
                _mm256_mul_pd(_mm256_mul_pd(a, xv), p), _mm256_mul_pd(b, pm1));
            pm1 = p;
            p = next;
        }
        _mm256_storeu_pd(out + i, p);
    }
    for (; i < count; ++i) {
        double pm1 = 1.0;
        double p = x[i];
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

void linear_orbit_avx2(const double* base, const double* dir, std::size_t dim,
                       const double* t, std::size_t count, double period, double* out) {
    const __m256d vperiod = _mm256_set1_pd(period);
    const __m256d vinv = _mm256_set1_pd(1.0 / period);
    for (std::size_t c = 0; c < dim; ++c) {
        const __m256d b = _mm256_set1_pd(base[c]);
        const __m256d d = _mm256_set1_pd(dir[c]);
        double* row = out + c * count;
        std::size_t i = 0;
        for (; i + 4 <= count; i += 4) {
            const __m256d tv = _mm256_loadu_pd(t + i);
            const __m256d v = _mm256_add_pd(b, _mm256_mul_pd(tv, d));
            const __m256d f = _mm256_floor_pd(_mm256_mul_pd(v, vinv));
            __m256d w = _mm256_sub_pd(v, _mm256_mul_pd(f, vperiod));
            const __m256d ge = _mm256_cmp_pd(w, vperiod, _CMP_GE_OQ);
            w = _mm256_blendv_pd(w, _mm256_sub_pd(w, vperiod), ge);
            _mm256_storeu_pd(row + i, w);
        }
        const double inv_period = 1.0 / period;
        for (; i < count; ++i) {
            const double v = base[c] + t[i] * dir[c];
            double w = v - std::floor(v * inv_period) * period;
            if (w >= period) w -= period;
            row[i] = w;
        }
    }
}

}  // namespace

const KernelTable& avx2_table() {
    static const KernelTable table{nearest_avx2, count_within_avx2, legendre_avx2,
                                   linear_orbit_avx2, "avx2"};
    return table;
}

bool avx2_supported() { return __builtin_cpu_supports("avx2"); }

}  // namespace geobeam::kernels

#endif  // x86_64
