#include "doctest.h"

#include "geobeam/cover.hpp"

#include <cmath>

using namespace geobeam;

namespace {

std::shared_ptr<BeamSystem> torus_point_beam(double r) {
    auto model = make_model("torus2");
    auto H = std::make_shared<Submanifold>(Submanifold::point(model, Vec::Zero(2)));
    return make_continuous_beam(model, H, 0.5, 0.2 * r, 0.05);
}

}  // namespace

TEST_CASE("good cover on the point fiber circle") {
    CoverOptions copts;
    copts.mc_samples = 2000;
    auto cover = build_good_cover(torus_point_beam(0.1), 0.5, 0.1, copts);
    // 1-D circle packing: N in [44, 82] at r = 0.1, and D <= 8
    CHECK(cover.size() >= 44);
    CHECK(cover.size() <= 82);
    CHECK(cover.D <= 8);
    CHECK(verify_coloring(cover));

    // halving r roughly doubles the count
    CoverOptions c2 = copts;
    c2.verify = false;
    auto cover2 = build_good_cover(torus_point_beam(0.05), 0.5, 0.05, c2);
    const double ratio = static_cast<double>(cover2.size()) / cover.size();
    CHECK(ratio >= 1.6);
    CHECK(ratio <= 2.4);
}

TEST_CASE("cover rejects oversized tubes via D_max") {
    CoverOptions tight;
    tight.verify = false;
    tight.D_max = 3;  // force the coloring cap
    CHECK_THROWS_AS(build_good_cover(torus_point_beam(0.1), 0.5, 0.1, tight), InvariantError);
}

TEST_CASE("partitions never mutate cover geometry") {
    CoverOptions copts;
    copts.verify = false;
    auto cover = build_good_cover(torus_point_beam(0.05), 0.5, 0.05, copts);
    const auto centers_before = cover.centers;
    auto rep = classify_looping(cover, 3.0, 8.0);
    auto part = partition_single_window(cover, rep, 3.0, 8.0);
    (void)part;
    CHECK(cover.centers == centers_before);
    CHECK(verify_coloring(cover));
}

TEST_CASE("looping classification era") {
    // sphere: every tube loops with a return window near 2 pi
    auto sphere = make_model("sphere2");
    Vec at(3);
    at << 1, 0, 0;
    auto H = std::make_shared<Submanifold>(Submanifold::point(sphere, at));
    auto beam = make_continuous_beam(sphere, H, 0.5, 0.2 * 0.1, 0.05);
    CoverOptions copts;
    copts.verify = false;
    auto cover = build_good_cover(beam, 0.5, 0.1, copts);
    auto rep = classify_looping(cover, 2.0, 7.0);
    for (std::size_t i = 0; i < cover.size(); ++i) {
        REQUIRE(!rep.windows[i].empty());
        bool near_period = false;
        for (const auto& w : rep.windows[i])
            if (std::abs(w.t_begin - 2 * M_PI) < 1.2) near_period = true;
        CHECK(near_period);
    }
    auto part = partition_single_window(cover, rep, 2.0, 7.0);
    CHECK(part.bad.size() == cover.size());
    CHECK(part.rungs.empty());
}

TEST_CASE("torus rational and irrational directions") {
    auto beam = torus_point_beam(0.01);
    CoverOptions copts;
    copts.verify = false;
    auto cover = build_good_cover(beam, 0.5, 0.01, copts);
    auto rep = classify_looping(cover, 3.0, 20.0);

    // tube centered closest to direction (1,0): closed geodesic, return ~ 2 pi
    std::size_t rational = 0, irrational = 0;
    double best_rat = 1e18, best_irr = 1e18;
    const double golden = (std::sqrt(5.0) - 1.0) / 2.0;
    for (std::size_t i = 0; i < cover.size(); ++i) {
        const Vec& e = cover.sys->net_embed(cover.centers[i]);
        const double ang = std::atan2(e[3], e[2]);
        if (std::abs(ang) < best_rat) {
            best_rat = std::abs(ang);
            rational = i;
        }
        const double target = std::atan2(golden, 1.0);
        if (std::abs(ang - target) < best_irr) {
            best_irr = std::abs(ang - target);
            irrational = i;
        }
    }
    REQUIRE(!rep.windows[rational].empty());
    CHECK(std::abs(rep.windows[rational][0].t_begin - 2 * M_PI) < 0.6);
    CHECK(rep.windows[irrational].empty());
    CHECK(rep.nearest_return[irrational] > cover.r);

    // partition quality at T0 = 20 and emptiness below the shortest return
    auto part = partition_single_window(cover, rep, 3.0, 20.0);
    CHECK(static_cast<double>(part.bad.size()) / cover.size() <= 0.2);
    auto early = partition_single_window(cover, rep, 3.0, 5.0);
    CHECK(early.bad.empty());

    // monotonicity: enlarging T0 never shrinks B
    auto mid = partition_single_window(cover, rep, 3.0, 10.0);
    CHECK(early.bad.size() <= mid.bad.size());
    CHECK(mid.bad.size() <= part.bad.size());
    for (std::size_t b : mid.bad)
        CHECK(std::find(part.bad.begin(), part.bad.end(), b) != part.bad.end());
}

TEST_CASE("controlled refinement budget") {
    // single ball of radius 2^-4, eps = 0.2, T0 = 2^8
    auto cat = std::make_shared<DiscreteHyperbolicSystem>();
    CatSegmentSpec spec;
    spec.length = 1e-9;  // single-center family
    auto beam = make_cat_beam(cat, spec);
    CoverOptions copts;
    copts.verify = false;
    auto cover = build_good_cover(beam, 0.0, std::pow(2.0, -4), copts);
    REQUIRE(cover.size() == 1);
    std::vector<std::size_t> active{0};
    auto f = [&](double t) { return cover.sys->det_contraction(0, t); };
    auto ref = controlled_refinement(cover, active, f, 0.2, 2.0, 256.0);
    CHECK(ref.feasible);
    double total = 0;
    for (const auto& b : ref.balls) total += b.radius;
    CHECK(total <= 0.2 * std::pow(2.0, -4));

    // f with no returns in the window -> empty removal list
    CatSegmentSpec far = spec;
    far.base = {0.9321, 0.1279};
    auto beam2 = make_cat_beam(cat, far);
    auto cover2 = build_good_cover(beam2, 0.0, std::pow(2.0, -4), copts);
    auto ref2 = controlled_refinement(cover2, active, f, 0.2, 2.0, 8.0);
    CHECK(ref2.feasible);
    CHECK(ref2.balls.empty());

    // eps >= 1 is trivially feasible and the set stays minimal
    auto ref3 = controlled_refinement(cover, active, f, 1.0, 2.0, 256.0);
    CHECK(ref3.feasible);
    CHECK(ref3.balls.size() == ref.balls.size());
}

TEST_CASE("dyadic ladder on the cat backend") {
    auto cat = std::make_shared<DiscreteHyperbolicSystem>();
    CatSegmentSpec spec;
    auto beam = make_cat_beam(cat, spec);
    CoverOptions copts;
    copts.verify = false;
    auto cover = build_good_cover(beam, 0.0, std::pow(2.0, -6), copts);
    auto rep = classify_looping(cover, 2.0, 256.0);
    auto lad = dyadic_ladder(cover, rep, 2.0, 256.0);
    // everything partitioned
    std::size_t total = lad.partition.bad.size();
    for (auto c : lad.rung_counts) total += c;
    CHECK(total == cover.size());
    // counts decay overall
    REQUIRE(lad.rung_counts.size() >= 2);
    CHECK(lad.rung_counts[0] > lad.partition.bad.size());
    CHECK(lad.fitted_ratio < 1.0);

    // m = 0 degenerates to the single-window partition
    auto deg = dyadic_ladder(cover, rep, 200.0, 256.0);
    CHECK(deg.partition.rungs.size() <= 1);

    // rungs re-tested at double density stay non-looping
    for (const auto& rung : lad.partition.rungs) {
        if (rung.tubes.empty()) continue;
        CHECK(union_looping_offenders(cover, rung.tubes, rung.t, rung.T, 2.0).empty());
    }
}

TEST_CASE("ladder refuses without a contraction certificate") {
    // torus tubes expand (det J_t grows): refusal with diagnostic
    auto beam = torus_point_beam(0.05);
    CoverOptions copts;
    copts.verify = false;
    auto cover = build_good_cover(beam, 0.5, 0.05, copts);
    auto rep = classify_looping(cover, 3.0, 12.0);
    CHECK_THROWS_AS(dyadic_ladder(cover, rep, 3.0, 12.0), InvariantError);
}

TEST_CASE("gauss-bonnet fixtures") {
    const auto tri = spherical_right_triangle_check();
    CHECK(tri.angle_sum == doctest::Approx(3 * M_PI / 2).epsilon(1e-9));
    CHECK(tri.mismatch < 1e-4);

    const auto quad = hyperbolic_quadrilateral_check(0.5, 1.0, 2.0);
    // closed form: defect = area = 2 (asin(c/r1) - asin(c/r2))
    const double expected = 2.0 * (std::asin(0.5) - std::asin(0.25));
    CHECK(quad.defect == doctest::Approx(expected).epsilon(1e-6));
    CHECK(quad.mismatch < 1e-3);
}

TEST_CASE("recurrence gap mechanism on the half-plane") {
    auto hp = make_model("halfplane");
    auto H = Submanifold::halfplane_vertical(hp, 1.0, M_E);
    const auto gap = recurrence_gap_check(H, 1e-3, 3.0, 1e-3);
    CHECK(gap.pass);
    CHECK(gap.s_star > 0);
    CHECK(gap.s_star <= sq(gap.c2_hat) / sq(std::log(gap.c4 / gap.r)) * 1.001);
    // r down by 10: counts shrink at least by the squared-log trendline
    REQUIRE(gap.window_counts.size() == 2);
    const double shrink = gap.window_counts[0] / gap.window_counts[1];
    const double trend = sq(std::log(gap.c4 * 10 / gap.r) / std::log(gap.c4 / gap.r));
    CHECK(shrink >= 0.7 * trend);

    // refusals: flat model and non-geodesic H
    auto torus = make_model("torus2");
    auto Ht = Submanifold::torus_circle(torus, 0.0);
    CHECK_THROWS_AS(recurrence_gap_check(Ht, 1e-3, 3.0, 1e-3), InvariantError);
}
