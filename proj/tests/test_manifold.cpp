#include "doctest.h"

#include "geobeam/flow.hpp"
#include "geobeam/manifold.hpp"

#include <cmath>

using namespace geobeam;

TEST_CASE("metric_at on the registered models") {
    FlatTorus torus(2);
    Vec x(2);
    x << 1.7, 4.1;
    CHECK((metric_at(torus, x) - Mat::Identity(2, 2)).norm() == 0.0);

    HyperbolicHalfPlane hp;
    Vec p1(2), p2(2);
    p1 << 0.0, 1.0;
    p2 << 0.0, 2.0;
    CHECK((metric_at(hp, p1) - Mat::Identity(2, 2)).norm() < 1e-15);
    CHECK((metric_at(hp, p2) - 0.25 * Mat::Identity(2, 2)).norm() < 1e-15);

    Vec bad(2);
    bad << 0.0, -1.0;
    CHECK_THROWS_AS(metric_at(hp, bad), DomainError);
}

TEST_CASE("finite-difference Christoffels match analytic ones") {
    HyperbolicHalfPlane hp;
    Vec x(2);
    x << 0.3, 1.4;
    const auto fd = christoffel_fd(hp, x);
    const auto an = hp.christoffel(x);
    for (int k = 0; k < 2; ++k) CHECK((fd[k] - an[k]).cwiseAbs().maxCoeff() < 1e-6);

    FlatTorus torus(2);
    Vec y(2);
    y << 2.0, 0.5;
    const auto fdt = christoffel_fd(torus, y);
    for (int k = 0; k < 2; ++k) CHECK(fdt[k].cwiseAbs().maxCoeff() < 1e-10);

    WarpedSurface ws("cosh");
    Vec z(2);
    z << 0.4, 1.0;
    const auto fdw = christoffel_fd(ws, z);
    const auto anw = ws.christoffel(z);
    for (int k = 0; k < 2; ++k) CHECK((fdw[k] - anw[k]).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("curvature matrix along geodesics") {
    // sphere: R = Id; torus: 0; half-plane: -Id. Conformal-metric oracle for
    // the half-plane: K = -y^2 * Laplacian(log(1/y)) evaluated by central
    // differences.
    RoundSphere s2(2);
    Vec x3(3), v3(3);
    x3 << 1, 0, 0;
    v3 << 0, 1, 0;
    Mat frame(3, 1);
    frame.col(0) << 0, 0, 1;
    CHECK(s2.curvature_matrix(x3, v3, frame)(0, 0) == doctest::Approx(1.0));

    FlatTorus torus(2);
    CHECK(torus.curvature_matrix(Vec::Zero(2), Vec::Zero(2), Mat::Zero(2, 1)).norm() == 0.0);

    HyperbolicHalfPlane hp;
    Vec xh(2);
    xh << 0.2, 1.7;
    const double h = 1e-4;
    auto conf = [](double y) { return -std::log(y); };  // metric e^{2 conf} delta
    const double lap = (conf(xh[1] + h) - 2 * conf(xh[1]) + conf(xh[1] - h)) / (h * h);
    const double K_oracle = -xh[1] * xh[1] * lap;
    CHECK(hp.curvature_matrix(xh, Vec::Zero(2), Mat::Zero(2, 1))(0, 0) ==
          doctest::Approx(K_oracle).epsilon(1e-6));

    WarpedSurface bump("bump");
    Vec xb(2);
    xb << 0.5, 0.0;
    // finite-difference Gauss curvature of dr^2 + f(r)^2 dth^2: K = -f''/f
    auto f = [](double r) { return 1.0 + 0.25 * std::exp(-r * r); };
    const double fpp = (f(xb[0] + h) - 2 * f(xb[0]) + f(xb[0] - h)) / (h * h);
    CHECK(bump.gauss_curvature(xb) == doctest::Approx(-fpp / f(xb[0])).epsilon(1e-6));
}

TEST_CASE("curvature matrix along geodesics via the operation") {
    RoundSphere s2(2);
    GeodesicSpec g;
    g.x = Vec(3);
    g.x << 1, 0, 0;
    g.v = Vec(3);
    g.v << 0, 1, 0;
    for (double t : {0.3, 1.7, 4.0}) {
        const auto data = curvature_matrix_along(s2, g, t);
        CHECK(data.R(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(data.frame_drift < 1e-6);
    }

    FlatTorus torus(2);
    GeodesicSpec gt;
    gt.x = Vec::Zero(2);
    gt.v = Vec(2);
    gt.v << 0.6, 0.8;
    CHECK(curvature_matrix_along(torus, gt, 2.0).R.cwiseAbs().maxCoeff() == 0.0);

    HyperbolicHalfPlane hp;
    GeodesicSpec gh;
    gh.x = Vec(2);
    gh.x << 0, 1;
    gh.v = Vec(2);
    gh.v << 0, 1;
    const auto dh = curvature_matrix_along(hp, gh, 1.0);
    CHECK(dh.R(0, 0) == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(dh.gauss == doctest::Approx(-1.0));
}

TEST_CASE("integrated curvature over tubular neighborhoods") {
    FlatTorus torus(2);
    GeodesicSpec g;
    g.x = Vec::Zero(2);
    g.v = Vec(2);
    g.v << 1, 0;
    CHECK(integrated_curvature(torus, g, 0.1, 0.0, 1.0) == doctest::Approx(0.0).epsilon(1e-12));

    HyperbolicHalfPlane hp;
    GeodesicSpec gh;
    gh.x = Vec(2);
    gh.x << 0.0, 1.0;
    gh.v = Vec(2);
    gh.v << 0.0, 1.0;  // unit hyperbolic norm at y=1
    const double got = integrated_curvature(hp, gh, 0.1, 0.0, 1.0);
    // closed form: K = -1, area = L * 2 sinh(s)
    CHECK(got == doctest::Approx(-2.0 * std::sinh(0.1)).epsilon(1e-4));
    CHECK(std::abs(got - (-0.2)) < 2.5e-3);  // -2*s*L to first order

    RoundSphere s2(2);
    GeodesicSpec gs;
    gs.x = Vec(3);
    gs.x << 1, 0, 0;
    gs.v = Vec(3);
    gs.v << 0, 1, 0;
    const double gots = integrated_curvature(s2, gs, 0.2, 0.0, M_PI);
    CHECK(gots == doctest::Approx(M_PI * 2.0 * std::sin(0.2)).epsilon(1e-4));
    CHECK(std::abs(gots - 2.0 * 0.2 * M_PI) < 0.01);  // first order

    // additivity over disjoint windows
    const double left = integrated_curvature(hp, gh, 0.1, 0.0, 0.5);
    const double right = integrated_curvature(hp, gh, 0.1, 0.5, 1.0);
    CHECK(left + right == doctest::Approx(got).epsilon(1e-6));
}

TEST_CASE("integrated curvature rejects halfwidths beyond the focal radius") {
    RoundSphere s2(2);
    GeodesicSpec gs;
    gs.x = Vec(3);
    gs.x << 1, 0, 0;
    gs.v = Vec(3);
    gs.v << 0, 1, 0;
    CHECK_THROWS_AS(integrated_curvature(s2, gs, 2.0, 0.0, 1.0), DomainError);
}

TEST_CASE("model registry") {
    CHECK(make_model("torus2")->dim() == 2);
    CHECK(make_model("sphere3")->dim() == 3);
    CHECK(make_model("halfplane")->curvature_kind() == CurvatureKind::constant_negative);
    CHECK_THROWS_AS(make_model("nope"), ConfigError);
}
