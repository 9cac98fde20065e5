#include "geobeam/manifold.hpp"

#include "geobeam/flow.hpp"

#include <algorithm>
#include <cmath>

namespace geobeam {

void Manifold::normalize_state(Vec&, Vec*) const {}

double Manifold::gauss_curvature(const Vec&) const {
    throw GeobeamError("gauss_curvature: not a surface model");
}

std::vector<Mat> Manifold::christoffel(const Vec&) const {
    throw GeobeamError("christoffel: not available for embedded models");
}

double Manifold::inner(const Vec& x, const Vec& u, const Vec& w) const {
    return u.dot(metric(x) * w);
}

double Manifold::norm(const Vec& x, const Vec& u) const {
    return std::sqrt(std::max(0.0, inner(x, u, u)));
}

Vec Manifold::cotangent_to_tangent(const Vec& x, const Vec& xi) const {
    return metric(x).ldlt().solve(xi);
}

Vec Manifold::tangent_to_cotangent(const Vec& x, const Vec& v) const {
    return metric(x) * v;
}

// ---------------------------------------------------------------------------
// Flat torus

FlatTorus::FlatTorus(int n, Vec periods) : Manifold("torus", n, n) {
    if (periods.size() == 0) {
        periods_ = Vec::Constant(n, 2.0 * M_PI);
    } else {
        if (periods.size() != n) throw ConfigError("torus periods size mismatch");
        periods_ = periods;
    }
    for (int i = 0; i < n; ++i)
        if (periods_[i] <= 0) throw ConfigError("torus periods must be positive");
}

bool FlatTorus::in_domain(const Vec& x) const { return x.size() == coord_dim(); }

Mat FlatTorus::metric(const Vec&) const { return Mat::Identity(coord_dim(), coord_dim()); }

Vec FlatTorus::geodesic_accel(const Vec&, const Vec&) const { return Vec::Zero(coord_dim()); }

Vec FlatTorus::transport_rhs(const Vec&, const Vec&, const Vec&) const {
    return Vec::Zero(coord_dim());
}

void FlatTorus::normalize_state(Vec& x, Vec*) const {
    for (int i = 0; i < x.size(); ++i) {
        const double p = periods_[i];
        x[i] -= std::floor(x[i] / p) * p;
        if (x[i] >= p) x[i] -= p;
    }
}

Mat FlatTorus::curvature_matrix(const Vec&, const Vec&, const Mat&) const {
    return Mat::Zero(dim() - 1, dim() - 1);
}

Vec FlatTorus::wrapped_diff(const Vec& x, const Vec& y) const {
    Vec d = y - x;
    for (int i = 0; i < d.size(); ++i) {
        const double p = periods_[i];
        d[i] -= std::round(d[i] / p) * p;
    }
    return d;
}

double FlatTorus::base_distance(const Vec& x, const Vec& y) const {
    return wrapped_diff(x, y).norm();
}

Vec FlatTorus::connecting_direction(const Vec& x, const Vec& y) const {
    Vec d = wrapped_diff(x, y);
    const double n = d.norm();
    if (n < 1e-14) throw NumericError("connecting_direction: coincident points");
    return d / n;
}

std::vector<Mat> FlatTorus::christoffel(const Vec&) const {
    return std::vector<Mat>(coord_dim(), Mat::Zero(coord_dim(), coord_dim()));
}

Vec FlatTorus::random_base(Rng& rng) const {
    Vec x(coord_dim());
    for (int i = 0; i < coord_dim(); ++i) x[i] = rng.uniform(0.0, periods_[i]);
    return x;
}

// ---------------------------------------------------------------------------
// Round sphere, embedded

RoundSphere::RoundSphere(int n) : Manifold(n == 2 ? "sphere2" : "sphere3", n, n + 1) {
    if (n != 2 && n != 3) throw ConfigError("RoundSphere supports n=2,3");
}

bool RoundSphere::in_domain(const Vec& x) const {
    return x.size() == coord_dim() && std::abs(x.norm() - 1.0) < 1e-6;
}

Mat RoundSphere::metric(const Vec&) const { return Mat::Identity(coord_dim(), coord_dim()); }

Vec RoundSphere::geodesic_accel(const Vec& x, const Vec& v) const {
    return -v.squaredNorm() * x;
}

Vec RoundSphere::transport_rhs(const Vec& x, const Vec& v, const Vec& w) const {
    return -w.dot(v) * x;
}

void RoundSphere::normalize_state(Vec& x, Vec* v) const {
    x /= x.norm();
    if (v != nullptr) *v -= v->dot(x) * x;
}

Mat RoundSphere::curvature_matrix(const Vec&, const Vec&, const Mat& frame) const {
    return Mat::Identity(frame.cols(), frame.cols());
}

double RoundSphere::base_distance(const Vec& x, const Vec& y) const {
    const double c = std::clamp(x.dot(y), -1.0, 1.0);
    const double chord = (x - y).norm();
    // asin form is accurate near 0; acos handles antipodes.
    return (chord < 1.0) ? 2.0 * std::asin(0.5 * chord) : std::acos(c);
}

Vec RoundSphere::connecting_direction(const Vec& x, const Vec& y) const {
    Vec t = y - x.dot(y) * x;
    const double n = t.norm();
    if (n < 1e-12) throw NumericError("connecting_direction: conjugate or coincident points");
    return t / n;
}

Vec RoundSphere::project_tangent(const Vec& x, const Vec& u) const {
    return u - u.dot(x) * x;
}

Vec RoundSphere::random_base(Rng& rng) const { return rng.unit_vector(coord_dim()); }

Vec RoundSphere::transport_closed_form(const Vec& x, const Vec& y, const Vec& w) const {
    const double d = base_distance(x, y);
    if (d < 1e-14) return w;
    const Vec u1 = connecting_direction(x, y);
    // Tangent at y pointing away from x along the same great circle.
    Vec u2 = -(x - x.dot(y) * y);
    u2 /= u2.norm();
    const Vec residual = w - w.dot(u1) * u1;  // invariant component(s)
    return w.dot(u1) * u2 + residual - residual.dot(y) * y;
}

// ---------------------------------------------------------------------------
// Hyperbolic half-plane patch

HyperbolicHalfPlane::HyperbolicHalfPlane(HalfPlaneBox box) : Manifold("halfplane", 2, 2), box_(box) {
    if (box_.ymin <= 0) throw ConfigError("half-plane box must have ymin > 0");
}

bool HyperbolicHalfPlane::in_domain(const Vec& x) const {
    return x.size() == 2 && x[0] >= box_.xmin && x[0] <= box_.xmax && x[1] >= box_.ymin &&
           x[1] <= box_.ymax;
}

Mat HyperbolicHalfPlane::metric(const Vec& x) const {
    return Mat::Identity(2, 2) / (x[1] * x[1]);
}

Vec HyperbolicHalfPlane::geodesic_accel(const Vec& x, const Vec& v) const {
    Vec a(2);
    const double y = x[1];
    a[0] = 2.0 * v[0] * v[1] / y;
    a[1] = (v[1] * v[1] - v[0] * v[0]) / y;
    return a;
}

Vec HyperbolicHalfPlane::transport_rhs(const Vec& x, const Vec& v, const Vec& w) const {
    // w'^k = -Gamma^k_ij v^i w^j with Gamma^x_xy = Gamma^x_yx = -1/y,
    // Gamma^y_xx = 1/y, Gamma^y_yy = -1/y.
    const double y = x[1];
    Vec r(2);
    r[0] = (v[0] * w[1] + v[1] * w[0]) / y;
    r[1] = (v[1] * w[1] - v[0] * w[0]) / y;
    return r;
}

Mat HyperbolicHalfPlane::curvature_matrix(const Vec&, const Vec&, const Mat&) const {
    return -Mat::Identity(1, 1);
}

double HyperbolicHalfPlane::base_distance(const Vec& x, const Vec& y) const {
    const double num = sq(y[0] - x[0]) + sq(y[1] - x[1]);
    return std::acosh(1.0 + num / (2.0 * x[1] * y[1]));
}

Vec HyperbolicHalfPlane::connecting_direction(const Vec& x, const Vec& y) const {
    Vec v(2);
    if (std::abs(y[0] - x[0]) < 1e-14) {
        v << 0.0, (y[1] > x[1] ? 1.0 : -1.0);
    } else {
        // Geodesic is a circle centered at (c, 0).
        const double c =
            (sq(y[0]) + sq(y[1]) - sq(x[0]) - sq(x[1])) / (2.0 * (y[0] - x[0]));
        Vec radial(2);
        radial << x[0] - c, x[1];
        Vec t(2);
        t << -radial[1], radial[0];  // tangent to the circle
        if (t[0] * (y[0] - x[0]) < 0) t = -t;
        v = t / t.norm();
    }
    return v * x[1];  // unit hyperbolic norm
}

std::vector<Mat> HyperbolicHalfPlane::christoffel(const Vec& x) const {
    const double y = x[1];
    std::vector<Mat> G(2, Mat::Zero(2, 2));
    G[0](0, 1) = G[0](1, 0) = -1.0 / y;
    G[1](0, 0) = 1.0 / y;
    G[1](1, 1) = -1.0 / y;
    return G;
}

Vec HyperbolicHalfPlane::random_base(Rng& rng) const {
    Vec x(2);
    x << rng.uniform(-2.0, 2.0), rng.uniform(0.5, 2.0);
    return x;
}

// ---------------------------------------------------------------------------
// Warped-product surface

WarpedSurface::WarpedSurface(std::string profile, double rmax, double bump_amp)
    : Manifold("warped_" + profile, 2, 2), profile_(std::move(profile)), rmax_(rmax),
      amp_(bump_amp) {
    if (profile_ == "cosh") {
        kind_ = CurvatureKind::constant_negative;
    } else if (profile_ == "bump") {
        kind_ = CurvatureKind::variable;
    } else {
        throw ConfigError("unknown warped profile: " + profile_);
    }
}

double WarpedSurface::f(double r) const {
    return profile_ == "cosh" ? std::cosh(r) : 1.0 + amp_ * std::exp(-r * r);
}
double WarpedSurface::fp(double r) const {
    return profile_ == "cosh" ? std::sinh(r) : -2.0 * r * amp_ * std::exp(-r * r);
}
double WarpedSurface::fpp(double r) const {
    return profile_ == "cosh" ? std::cosh(r)
                              : (4.0 * r * r - 2.0) * amp_ * std::exp(-r * r);
}

bool WarpedSurface::in_domain(const Vec& x) const {
    return x.size() == 2 && std::abs(x[0]) <= rmax_;
}

Mat WarpedSurface::metric(const Vec& x) const {
    Mat g = Mat::Zero(2, 2);
    g(0, 0) = 1.0;
    g(1, 1) = sq(f(x[0]));
    return g;
}

Vec WarpedSurface::geodesic_accel(const Vec& x, const Vec& v) const {
    const double r = x[0];
    Vec a(2);
    a[0] = f(r) * fp(r) * v[1] * v[1];
    a[1] = -2.0 * (fp(r) / f(r)) * v[0] * v[1];
    return a;
}

Vec WarpedSurface::transport_rhs(const Vec& x, const Vec& v, const Vec& w) const {
    const double r = x[0];
    Vec out(2);
    out[0] = f(r) * fp(r) * v[1] * w[1];
    out[1] = -(fp(r) / f(r)) * (v[0] * w[1] + v[1] * w[0]);
    return out;
}

Mat WarpedSurface::curvature_matrix(const Vec& x, const Vec&, const Mat&) const {
    Mat R(1, 1);
    R(0, 0) = gauss_curvature(x);
    return R;
}

double WarpedSurface::gauss_curvature(const Vec& x) const { return -fpp(x[0]) / f(x[0]); }

double WarpedSurface::base_distance(const Vec& x, const Vec& y) const {
    // Local chart distance; adequate for the linearized checks this model backs.
    const double fm = f(0.5 * (x[0] + y[0]));
    double dth = y[1] - x[1];
    dth -= std::round(dth / (2.0 * M_PI)) * 2.0 * M_PI;
    return std::sqrt(sq(y[0] - x[0]) + sq(fm * dth));
}

Vec WarpedSurface::connecting_direction(const Vec& x, const Vec& y) const {
    Vec d(2);
    d[0] = y[0] - x[0];
    double dth = y[1] - x[1];
    dth -= std::round(dth / (2.0 * M_PI)) * 2.0 * M_PI;
    d[1] = dth;
    const double n = norm(x, d);
    if (n < 1e-14) throw NumericError("connecting_direction: coincident points");
    return d / n;
}

std::vector<Mat> WarpedSurface::christoffel(const Vec& x) const {
    const double r = x[0];
    std::vector<Mat> G(2, Mat::Zero(2, 2));
    G[0](1, 1) = -f(r) * fp(r);
    G[1](0, 1) = G[1](1, 0) = fp(r) / f(r);
    return G;
}

Vec WarpedSurface::random_base(Rng& rng) const {
    Vec x(2);
    x << rng.uniform(-0.8 * rmax_, 0.8 * rmax_), rng.uniform(0.0, 2.0 * M_PI);
    return x;
}

// ---------------------------------------------------------------------------
// Operations

Mat metric_at(const Manifold& m, const Vec& x) {
    if (!m.in_domain(x)) throw DomainError("metric_at: point outside chart domain");
    Mat g = m.metric(x);
    Eigen::SelfAdjointEigenSolver<Mat> es(g);
    if (es.eigenvalues().minCoeff() <= 1e-10)
        throw NumericError("metric_at: metric not positive definite");
    return g;
}

std::vector<Mat> christoffel_fd(const Manifold& m, const Vec& x, double step) {
    const int d = m.coord_dim();
    // dg[l] = partial_l g
    std::vector<Mat> dg(d);
    for (int l = 0; l < d; ++l) {
        Vec xp = x, xm = x;
        xp[l] += step;
        xm[l] -= step;
        dg[l] = (m.metric(xp) - m.metric(xm)) / (2.0 * step);
    }
    const Mat ginv = m.metric(x).inverse();
    std::vector<Mat> G(d, Mat::Zero(d, d));
    for (int k = 0; k < d; ++k)
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) {
                double s = 0;
                for (int l = 0; l < d; ++l)
                    s += ginv(k, l) * (dg[i](j, l) + dg[j](i, l) - dg[l](i, j));
                G[k](i, j) = 0.5 * s;
            }
    return G;
}

namespace {

// Midpoint-rule Fermi quadrature at a given resolution.
double fermi_quadrature(const Manifold& m, const GeodesicSpec& gamma, double s, double a,
                        double b, int nt, int nu) {
    FlowOptions opts;
    PhasePoint start{gamma.x, m.tangent_to_cotangent(gamma.x, gamma.v)};
    // Propagate base geodesic + frame over [min(a,0), max(b,0)].
    FlowSegment seg = propagate_linearization(m, start, std::max(b, 0.0), opts);
    FlowSegment neg;
    if (a < 0) neg = propagate_linearization(m, start, a, opts);

    double total = 0.0;
    const double ht = (b - a) / nt;
    const double hu = 2.0 * s / nu;
    for (int i = 0; i < nt; ++i) {
        const double t = a + (i + 0.5) * ht;
        const FlowSegment& ref = (t >= 0 || a >= 0) ? seg : neg;
        const auto st = ref.state_at_time(t);
        const Vec normal = st.frame.col(0);
        // Integrate the normal geodesic outward both ways, carrying the scalar
        // Jacobi weight phi'' = -K phi, phi(0)=1, phi'(0)=0.
        for (int side = -1; side <= 1; side += 2) {
            Vec x = st.x;
            Vec v = side * normal;
            double phi = 1.0, dphi = 0.0;
            const int steps = nu / 2;
            for (int j = 0; j < steps; ++j) {
                // midpoint of this u-cell
                const double K0 = m.gauss_curvature(x);
                // half-step to the midpoint for sampling
                Vec xm = x, vm = v;
                rk4_geodesic_step(m, xm, vm, 0.5 * hu);
                const double Km = m.gauss_curvature(xm);
                double phim = phi + 0.5 * hu * dphi - 0.125 * hu * hu * K0 * phi;
                if (phim <= 0.0)
                    throw DomainError("integrated_curvature: halfwidth beyond focal radius");
                total += Km * phim * hu * ht;
                // full step with the scalar Jacobi equation (RK4 on (phi, dphi))
                auto acc = [&](double ph) { return -K0 * ph; };
                const double k1p = dphi, k1v = acc(phi);
                const double k2p = dphi + 0.5 * hu * k1v, k2v = acc(phi + 0.5 * hu * k1p);
                const double k3p = dphi + 0.5 * hu * k2v, k3v = acc(phi + 0.5 * hu * k2p);
                const double k4p = dphi + hu * k3v, k4v = acc(phi + hu * k3p);
                phi += hu / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p);
                dphi += hu / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v);
                rk4_geodesic_step(m, x, v, hu);
            }
        }
    }
    return total;
}

}  // namespace

double integrated_curvature(const Manifold& m, const GeodesicSpec& gamma, double halfwidth,
                            double a, double b) {
    if (m.dim() != 2) throw GeobeamError("integrated_curvature: surface models only");
    if (halfwidth <= 0) throw DomainError("integrated_curvature: halfwidth must be positive");
    if (b <= a) throw DomainError("integrated_curvature: empty window");
    const double len = b - a;
    const int nt = std::max(8, static_cast<int>(std::ceil(64 * len)));
    const int nu = 64;
    const double coarse = fermi_quadrature(m, gamma, halfwidth, a, b, nt, nu);
    const double fine = fermi_quadrature(m, gamma, halfwidth, a, b, 2 * nt, 2 * nu);
    return fine + (fine - coarse) / 3.0;  // one Richardson step, h^2 rule
}

CurvatureData curvature_matrix_along(const Manifold& m, const GeodesicSpec& gamma, double t) {
    FlowOptions opts;
    const PhasePoint start{gamma.x, m.tangent_to_cotangent(gamma.x, gamma.v)};
    const FlowSegment seg = propagate_linearization(m, start, t == 0 ? 1e-3 : t, opts);
    if (!seg.complete()) throw DomainError("curvature_matrix_along: orbit left the domain");
    const auto st = seg.state_at_time(t);
    CurvatureData data;
    data.x = st.x;
    data.frame = st.frame;
    data.direction = st.v;
    // orthonormality drift of the propagated frame
    double drift = std::abs(m.norm(st.x, st.v) - 1.0);
    for (int i = 0; i < st.frame.cols(); ++i) {
        drift = std::max(drift, std::abs(m.norm(st.x, st.frame.col(i)) - 1.0));
        drift = std::max(drift, std::abs(m.inner(st.x, st.frame.col(i), st.v)));
        for (int j = 0; j < i; ++j)
            drift = std::max(drift, std::abs(m.inner(st.x, st.frame.col(i), st.frame.col(j))));
    }
    data.frame_drift = drift;
    if (drift > 1e-6) throw NumericError("curvature_matrix_along: frame drift exceeds 1e-6");
    data.R = m.curvature_matrix(st.x, st.v, st.frame);
    if ((data.R - data.R.transpose()).cwiseAbs().maxCoeff() > 1e-12)
        throw NumericError("curvature_matrix_along: R not symmetric");
    if (m.dim() == 2) data.gauss = data.R(0, 0);
    return data;
}

std::shared_ptr<Manifold> make_model(const std::string& kind) {
    if (kind == "torus2") return std::make_shared<FlatTorus>(2);
    if (kind == "torus3") return std::make_shared<FlatTorus>(3);
    if (kind == "sphere2") return std::make_shared<RoundSphere>(2);
    if (kind == "sphere3") return std::make_shared<RoundSphere>(3);
    if (kind == "halfplane") return std::make_shared<HyperbolicHalfPlane>();
    if (kind == "warped_cosh") return std::make_shared<WarpedSurface>("cosh");
    if (kind == "warped_bump") return std::make_shared<WarpedSurface>("bump");
    throw ConfigError("unknown model kind: " + kind);
}

}  // namespace geobeam
