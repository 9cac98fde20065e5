#include "doctest.h"

#include "geobeam/common.hpp"
#include "geobeam/kernels.hpp"

#include <cmath>
#include <vector>

using namespace geobeam;
namespace k = geobeam::kernels;

namespace {

std::vector<double> random_soa(Rng& rng, std::size_t count, std::size_t dim, double lo,
                               double hi) {
    std::vector<double> soa(count * dim);
    for (auto& v : soa) v = rng.uniform(lo, hi);
    return soa;
}

}  // namespace

TEST_CASE("scalar and simd lanes agree exactly") {
    Rng rng(7);
    const auto& ref = k::scalar_table();
#if defined(__x86_64__) || defined(_M_X64)
    if (!k::avx2_supported()) return;
    const auto& simd = k::avx2_table();
#else
    const auto& simd = k::scalar_table();
#endif

    for (std::size_t dim : {2u, 3u, 4u, 6u, 8u}) {
        for (std::size_t count : {1u, 5u, 64u, 1000u, 4097u}) {
            const auto soa = random_soa(rng, count, dim, -3.0, 3.0);
            std::vector<double> q(dim);
            for (auto& v : q) v = rng.uniform(-3.0, 3.0);

            const auto a = ref.nearest(soa.data(), count, dim, q.data());
            const auto b = simd.nearest(soa.data(), count, dim, q.data());
            CHECK(a.index == b.index);
            CHECK(a.dist2 == b.dist2);

            const double r2 = rng.uniform(0.1, 4.0);
            CHECK(ref.count_within(soa.data(), count, dim, q.data(), r2) ==
                  simd.count_within(soa.data(), count, dim, q.data(), r2));
        }
    }

    for (int ell : {0, 1, 2, 17, 400}) {
        const std::size_t count = 1003;
        std::vector<double> xs(count), pa(count), pb(count);
        for (auto& v : xs) v = rng.uniform(-1.0, 1.0);
        ref.legendre_p(ell, xs.data(), count, pa.data());
        simd.legendre_p(ell, xs.data(), count, pb.data());
        for (std::size_t i = 0; i < count; ++i) CHECK(pa[i] == pb[i]);
    }

    {
        const std::size_t count = 777;
        std::vector<double> t(count), oa(2 * count), ob(2 * count);
        double base[2] = {rng.uniform(0, 6.28), rng.uniform(0, 6.28)};
        double dir[2] = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
        for (auto& v : t) v = rng.uniform(0.0, 50.0);
        ref.linear_orbit(base, dir, 2, t.data(), count, 2 * M_PI, oa.data());
        simd.linear_orbit(base, dir, 2, t.data(), count, 2 * M_PI, ob.data());
        for (std::size_t i = 0; i < 2 * count; ++i) {
            CHECK(oa[i] == ob[i]);
            CHECK(oa[i] >= 0.0);
            CHECK(oa[i] < 2 * M_PI);
        }
    }
}

TEST_CASE("nearest returns the first minimizer") {
    // duplicate points: index must be the first one
    std::size_t count = 8, dim = 2;
    std::vector<double> soa(count * dim, 0.0);
    for (std::size_t i = 0; i < count; ++i) {
        soa[0 * count + i] = (i == 3 || i == 6) ? 1.0 : 5.0;
        soa[1 * count + i] = 0.0;
    }
    const double q[2] = {1.0, 0.0};
    const auto r = k::active().nearest(soa.data(), count, dim, q);
    CHECK(r.index == 3);
    CHECK(r.dist2 == 0.0);
}

TEST_CASE("legendre recurrence matches closed forms") {
    std::vector<double> xs = {-1.0, -0.5, 0.0, 0.3, 1.0};
    std::vector<double> out(xs.size());
    k::legendre_p(2, xs.data(), xs.size(), out.data());
    for (std::size_t i = 0; i < xs.size(); ++i)
        CHECK(out[i] == doctest::Approx(0.5 * (3 * xs[i] * xs[i] - 1)).epsilon(1e-14));
    k::legendre_p(3, xs.data(), xs.size(), out.data());
    for (std::size_t i = 0; i < xs.size(); ++i)
        CHECK(out[i] ==
              doctest::Approx(0.5 * (5 * xs[i] * xs[i] * xs[i] - 3 * xs[i])).epsilon(1e-14));
    // P_ell(1) = 1 stays exact to roundoff at high degree
    double one = 1.0, val;
    k::legendre_p(400, &one, 1, &val);
    CHECK(val == doctest::Approx(1.0).epsilon(1e-10));
}
