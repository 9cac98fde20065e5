#include "doctest.h"

#include "geobeam/conormal.hpp"
#include "geobeam/flow.hpp"

#include <cmath>

using namespace geobeam;

TEST_CASE("sample_snh nets") {
    auto torus = make_model("torus2");
    auto Hp = Submanifold::point(torus, Vec::Zero(2));
    const auto net = sample_snh(Hp, 0.1);
    // circle of unit covectors, count ~ 2 pi / spacing
    CHECK(net.size() >= 2 * M_PI / 0.1 * 0.9);
    CHECK(net.size() <= 2 * M_PI / 0.1 * 1.3);
    for (const auto& cp : net) CHECK((cp.rho.x - Vec::Zero(2)).norm() < 1e-12);

    auto sphere = make_model("sphere2");
    auto Heq = Submanifold::sphere_equator(sphere);
    const auto neteq = sample_snh(Heq, 0.2);
    CHECK(neteq.size() % 2 == 0);  // two conormal branches per base sample
    for (const auto& cp : neteq) {
        CHECK(std::abs(cp.rho.x[2]) < 1e-12);             // base on the equator
        CHECK(std::abs(std::abs(cp.rho.xi[2]) - 1.0) < 1e-9);  // polar conormal
    }

    // covering radius on the point fiber, checked by brute force
    Vec xs(3);
    xs << 0, 0, 1;
    auto Hs = Submanifold::point(sphere, xs);
    const auto nets = sample_snh(Hs, 0.15);
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        Vec v = rng.unit_vector(3);
        v = sphere->project_tangent(xs, v);
        if (v.norm() < 1e-6) continue;
        const auto q = make_phase_point(*sphere, xs, v);
        double best = 1e18;
        for (const auto& cp : nets) best = std::min(best, sasaki_distance(*sphere, q, cp.rho));
        CHECK(best <= 0.15 + 1e-9);
    }
}

TEST_CASE("sasaki distance") {
    auto torus = std::make_shared<FlatTorus>(2);
    // equal base, covectors at angle theta -> theta
    Vec x0 = Vec::Zero(2), e1(2), e2(2);
    e1 << 1, 0;
    e2 << 0, 1;
    const double th = 0.73;
    auto a = make_phase_point(*torus, x0, e1);
    auto b = make_phase_point(*torus, x0, Vec(std::cos(th) * e1 + std::sin(th) * e2));
    CHECK(sasaki_distance(*torus, a, b) == doctest::Approx(th).epsilon(1e-12));

    // same covector parallel transported distance d -> d
    Vec x1(2);
    x1 << 0.4, 0.0;
    auto c = make_phase_point(*torus, x1, e1);
    CHECK(sasaki_distance(*torus, a, c) == doctest::Approx(0.4).epsilon(1e-12));

    // mixed example
    Vec x3(2);
    x3 << 0.3, 0.0;
    auto d = make_phase_point(*torus, x3, e2);
    CHECK(sasaki_distance(*torus, a, d) ==
          doctest::Approx(std::sqrt(0.09 + sq(M_PI / 2))).epsilon(1e-12));

    // symmetry + triangle inequality on sampled triples (sphere, transported)
    auto sphere = std::make_shared<RoundSphere>(2);
    Rng rng(17);
    for (int trial = 0; trial < 40; ++trial) {
        auto rp = [&]() {
            const Vec x = rng.unit_vector(3);
            Vec v = sphere->project_tangent(x, rng.unit_vector(3));
            if (v.norm() < 1e-6) v = sphere->project_tangent(x, rng.unit_vector(3));
            return make_phase_point(*sphere, x, v);
        };
        const auto p1 = rp(), p2 = rp(), p3 = rp();
        bool f12 = false, f21 = false;
        const double d12 = sasaki_distance(*sphere, p1, p2, &f12);
        const double d21 = sasaki_distance(*sphere, p2, p1, &f21);
        if (!f12 && !f21) {
            CHECK(d12 == doctest::Approx(d21).epsilon(1e-6));
        } else {
            CHECK(d12 == doctest::Approx(d21).epsilon(1e-2));  // chordal fallback
        }
        const double d13 = sasaki_distance(*sphere, p1, p3);
        const double d23 = sasaki_distance(*sphere, p2, p3);
        CHECK(d13 <= d12 + d23 + 1e-6);
    }
}

TEST_CASE("defining function comparability") {
    Rng rng(5);
    auto torus = make_model("torus2");
    auto H = std::make_shared<Submanifold>(Submanifold::point(torus, Vec::Zero(2)));
    auto F = defining_function(*H, rng);
    CHECK(F.delta_F() > 0.0);

    // F vanishes on SN*H samples
    for (const auto& cp : sample_snh(*H, 0.3)) CHECK(F(cp.rho).norm() < 1e-9);

    // comparability against a brute-force nearest-point oracle
    const auto fine = sample_snh(*H, 0.01);
    for (int trial = 0; trial < 60; ++trial) {
        const auto& cp = fine[rng.uniform_int(static_cast<int>(fine.size()))];
        PhasePoint q = cp.rho;
        const double delta = 0.3 * F.delta_F() * (0.2 + 0.8 * rng.uniform());
        Vec dx = rng.unit_vector(2);
        q.x += delta * 0.6 * dx;
        q.xi *= 1.0 + delta * 0.4 * (rng.uniform() - 0.5);
        double dist = 1e18;
        for (const auto& p : fine) dist = std::min(dist, sasaki_distance(*torus, q, p.rho));
        const double radial =
            torus->norm(q.x, torus->cotangent_to_tangent(q.x, q.xi)) - 1.0;
        dist = std::sqrt(dist * dist + radial * radial);
        if (dist < 1e-6) continue;
        const double f = F(q).norm();
        CHECK(f >= 0.5 * dist - 1e-9);
        CHECK(f <= 2.0 * dist + 1e-9);
    }

    // equator: first component factors through the base polar offset
    auto sphere = make_model("sphere2");
    auto Heq = std::make_shared<Submanifold>(Submanifold::sphere_equator(sphere));
    Rng rng2(6);
    auto Feq = defining_function(*Heq, rng2);
    Vec x(3);
    x << std::cos(0.2) * 1.0, 0.0, std::sin(0.2);
    x /= x.norm();
    PhasePoint q{x, Vec(Vec::Zero(3))};
    Vec xi(3);
    xi << 0, 0, 1;
    q.xi = xi;
    CHECK(Feq(q)[0] == doctest::Approx(x[2]).epsilon(1e-12));
}

TEST_CASE("tube membership") {
    auto torus = make_model("torus2");
    auto H = Submanifold::point(torus, Vec::Zero(2));
    const auto net = sample_snh(H, 0.1);
    Tube tube;
    tube.center = net[0];
    tube.tau = 0.5;
    tube.r = 0.05;
    CHECK(tube_membership(*torus, tube, tube.center.rho));
    const auto moved = flow(*torus, tube.center.rho, tube.tau);
    CHECK(tube_membership(*torus, tube, moved));
    // a point at fiber angle >> r from every orbit sample
    Vec e1(2), e2(2);
    e1 << 1, 0;
    e2 << 0, 1;
    const auto far = make_phase_point(
        *torus, Vec(Vec::Zero(2)),
        Vec(std::cos(1.0) * e1 + std::sin(1.0) * e2));
    CHECK_FALSE(tube_membership(*torus, tube, far));
}

TEST_CASE("tube membership inner approximation property") {
    // Sasaki-ball membership of radius r/2 around any orbit point of the
    // center implies tube membership
    auto torus = std::static_pointer_cast<const Manifold>(std::make_shared<FlatTorus>(2));
    auto H = Submanifold::point(torus, Vec::Zero(2));
    const auto net = sample_snh(H, 0.2);
    Tube tube;
    tube.center = net[3];
    tube.tau = 0.5;
    tube.r = 0.05;
    Rng rng(21);
    for (int trial = 0; trial < 40; ++trial) {
        const double t = tube.tau * (2 * rng.uniform() - 1);
        const auto orbit_pt = flow(*torus, tube.center.rho, t);
        // perturb within the r/2 Sasaki ball: base + fiber rotation
        const double rho_b = 0.5 * tube.r * rng.uniform();
        const double ang = rng.uniform(0.0, 2 * M_PI);
        Vec x = orbit_pt.x;
        Vec v = torus->cotangent_to_tangent(x, orbit_pt.xi);
        Vec dir = rng.unit_vector(2);
        x += rho_b * std::cos(ang) * dir;
        Vec perp(2);
        perp << -v[1], v[0];
        const double df = rho_b * std::sin(ang);
        v = std::cos(df) * v + std::sin(df) * perp;
        CHECK(tube_membership(*torus, tube, make_phase_point(*torus, x, v)));
    }
}

TEST_CASE("psi is the defining function along the flow") {
    Rng rng(12);
    auto torus = std::static_pointer_cast<const Manifold>(std::make_shared<FlatTorus>(2));
    auto H = Submanifold::point(torus, Vec::Zero(2));
    auto F = defining_function(H, rng);
    const auto net = sample_snh(H, 0.5);
    // on SN*H, psi(0, rho) = F(rho) = 0; after flowing, psi tracks the base
    // displacement of the straight-line orbit
    CHECK(psi_eval(F, *torus, net[0].rho, 0.0).norm() < 1e-9);
    const Vec val = psi_eval(F, *torus, net[0].rho, 0.3);
    const Vec v0 = torus->cotangent_to_tangent(net[0].rho.x, net[0].rho.xi);
    CHECK(val.head(2).norm() == doctest::Approx(0.3).epsilon(1e-9));
    CHECK((val.head(2) - 0.3 * v0).norm() < 1e-9);
}

TEST_CASE("defining function right-inverse bound is recorded") {
    Rng rng(14);
    auto sphere = make_model("sphere2");
    auto H = Submanifold::sphere_equator(sphere);
    auto F = defining_function(H, rng);
    CHECK(F.right_inverse_bound() > 0.0);
    CHECK(F.right_inverse_bound() < 5.0);  // target <= 2, desk slack recorded
}

TEST_CASE("tau_inj estimates") {
    auto torus = make_model("torus2");
    auto H = Submanifold::point(torus, Vec::Zero(2));
    CHECK(tau_inj(H) == doctest::Approx(1.0));

    Vec periods(2);
    periods << 0.5, 0.5;
    auto small = std::make_shared<FlatTorus>(2, periods);
    auto Hs = Submanifold::point(std::static_pointer_cast<const Manifold>(
                                     std::shared_ptr<Manifold>(small)),
                                 Vec::Zero(2));
    const double ti = tau_inj(Hs);
    CHECK(ti < 0.25);
    CHECK(ti <= 1.0);
}

TEST_CASE("splitting classification") {
    // half-plane vertical geodesic: tangent of SN*H is horizontal, neither
    // stable nor unstable; on a surface S_H empty forces A_H empty
    auto hp = make_model("halfplane");
    auto H = std::make_shared<Submanifold>(Submanifold::halfplane_vertical(hp, 1.0, M_E));
    const auto net = sample_snh(*H, 0.3);
    const auto& cp = net[0];
    auto sp = stable_unstable(*hp, cp.rho, 6.0);
    REQUIRE(sp.usable);
    FlowOptions fo;
    auto seg = propagate_linearization(*hp, cp.rho, 0.5, fo);
    const auto cls = classify_splitting(*H, cp, sp, seg.states.front().frame);
    CHECK(cls.m_plus == 0);
    CHECK(cls.m_minus == 0);
    CHECK_FALSE(cls.in_S_H);
    CHECK_FALSE(cls.in_A_H);

    // cat-map analog: segment tangent aligned with an eigendirection
    DiscreteHyperbolicSystem cat;
    Mat Ep(2, 1), Em(2, 1), T(2, 1);
    Ep.col(0) = cat.eminus();  // contracting = stable
    Em.col(0) = cat.eplus();
    T.col(0) = cat.eminus();
    const auto cs = classify_subspaces(T, Ep, Em);
    CHECK(cs.m_plus == 1);
    CHECK(cs.m_minus == 0);
    CHECK(cs.in_S_H);
    CHECK_FALSE(cs.in_A_H);

    // degenerate surface logic: both m=1 only when N+ = N- = T
    Mat E(2, 1);
    E.col(0) = Eigen::Vector2d(1, 0);
    const auto dg = classify_subspaces(E, E, E);
    CHECK(dg.m_plus == 1);
    CHECK(dg.m_minus == 1);
    CHECK(dg.in_M_H);
    CHECK(dg.in_S_H);

    // classification export smoke
    {
        std::vector<ConormalPoint> pts{cp};
        std::vector<SplittingClass> cls{classify_splitting(*H, cp, sp, seg.states.front().frame)};
        const std::string csv = snh_classification_csv(*H, pts, cls);
        CHECK(csv.find("m_plus") != std::string::npos);
        CHECK(csv.find("in_A_H") != std::string::npos);
    }

    // flat torus: splitting unusable, classification refused
    auto torus = make_model("torus2");
    auto Ht = std::make_shared<Submanifold>(Submanifold::point(torus, Vec::Zero(2)));
    const auto nett = sample_snh(*Ht, 0.5);
    auto spt = stable_unstable(*torus, nett[0].rho, 10.0);
    CHECK_FALSE(spt.usable);
    auto segt = propagate_linearization(*torus, nett[0].rho, 0.5, fo);
    CHECK_THROWS_AS(classify_splitting(*Ht, nett[0], spt, segt.states.front().frame),
                    InvariantError);
}

TEST_CASE("theta functionals") {
    Mat Ep(2, 1), Em(2, 1);
    Ep.col(0) = Eigen::Vector2d(1, 0);
    Em.col(0) = Eigen::Vector2d(0, 1);
    {
        const auto [tp, tm] = theta_angles(Eigen::Vector2d(1, 0), Ep, Em);
        CHECK(tp == 0.0);
        CHECK(std::isinf(tm));
    }
    {
        const auto [tp, tm] = theta_angles(Eigen::Vector2d(1, 1), Ep, Em);
        CHECK(tp == doctest::Approx(1.0));
        CHECK(tm == doctest::Approx(1.0));
        CHECK(tp * tm == doctest::Approx(1.0));
    }
    // cat map: ratio of eigen-coordinates via an independent 2x2 solve
    DiscreteHyperbolicSystem cat;
    Mat E2p(2, 1), E2m(2, 1);
    E2p.col(0) = cat.eminus();
    E2m.col(0) = cat.eplus();
    const Eigen::Vector2d v(1, 0);
    Eigen::Matrix2d B;
    B.col(0) = cat.eminus();
    B.col(1) = cat.eplus();
    const Eigen::Vector2d coef = B.colPivHouseholderQr().solve(v);
    const auto [tp, tm] = theta_angles(v, E2p, E2m);
    CHECK(tp == doctest::Approx(std::abs(coef[1]) / std::abs(coef[0])).epsilon(1e-12));

    // monotonicity under the cat map: Theta^+ of the pushforward strictly
    // increases (expanding component grows, contracting shrinks)
    Eigen::Matrix2d M;
    M << 2, 1, 1, 1;
    Rng rng(9);
    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Eigen::Vector2d u(rng.normal(), rng.normal());
        const auto [t0p, t0m] = theta_angles(u, E2p, E2m);
        if (!(t0p > 0) || std::isinf(t0p)) continue;
        double prev = t0p;
        for (int t = 1; t <= 3; ++t) {
            u = M * u;
            const auto [tpp, tpm] = theta_angles(u, E2p, E2m);
            CHECK(tpp > prev);
            prev = tpp;
        }
        ++checked;
    }
    CHECK(checked >= 90);
}
