#include "geobeam/conormal.hpp"

#include "geobeam/io.hpp"
#include "geobeam/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace geobeam {

// ---------------------------------------------------------------------------
// Submanifold

Submanifold Submanifold::point(std::shared_ptr<const Manifold> m, Vec x0) {
    Submanifold H;
    H.model_ = std::move(m);
    H.kind_ = "point";
    H.codim_ = H.model_->dim();
    H.x0_ = std::move(x0);
    if (!H.model_->in_domain(H.x0_)) throw DomainError("Submanifold::point: x0 off-chart");
    H.K_H_ = 0.0;  // when H is a point, K_H is set to 0
    return H;
}

Submanifold Submanifold::torus_circle(std::shared_ptr<const Manifold> m, double x2) {
    Submanifold H;
    const auto* torus = dynamic_cast<const FlatTorus*>(m.get());
    if (torus == nullptr || torus->dim() != 2)
        throw ConfigError("torus_circle requires the 2-torus");
    H.model_ = std::move(m);
    H.kind_ = "torus_circle";
    H.codim_ = 1;
    H.level_ = x2;
    H.lo_ = 0.0;
    H.hi_ = torus->periods()[0];
    H.periodic_ = true;
    H.K_H_ = 0.0;
    return H;
}

Submanifold Submanifold::sphere_equator(std::shared_ptr<const Manifold> m) {
    Submanifold H;
    if (m->dim() != 2 || m->coord_dim() != 3) throw ConfigError("sphere_equator requires S^2");
    H.model_ = std::move(m);
    H.kind_ = "sphere_equator";
    H.codim_ = 1;
    H.lo_ = 0.0;
    H.hi_ = 2.0 * M_PI;
    H.periodic_ = true;
    H.K_H_ = 0.0;  // great circle is totally geodesic
    return H;
}

Submanifold Submanifold::halfplane_vertical(std::shared_ptr<const Manifold> m, double y0,
                                            double y1) {
    Submanifold H;
    if (dynamic_cast<const HyperbolicHalfPlane*>(m.get()) == nullptr)
        throw ConfigError("halfplane_vertical requires the half-plane model");
    if (y0 <= 0 || y1 <= y0) throw ConfigError("halfplane_vertical: need 0 < y0 < y1");
    H.model_ = std::move(m);
    H.kind_ = "halfplane_vertical";
    H.codim_ = 1;
    H.level_ = y0;
    H.lo_ = 0.0;
    H.hi_ = std::log(y1 / y0);  // arc-length parameter
    H.periodic_ = false;
    H.K_H_ = 0.0;  // vertical lines are geodesics
    return H;
}

Vec Submanifold::eval(double u) const {
    Vec x;
    if (kind_ == "point") return x0_;
    if (kind_ == "torus_circle") {
        x.resize(2);
        x << u, level_;
        Vec xx = x;
        model_->normalize_state(xx, nullptr);
        return xx;
    }
    if (kind_ == "sphere_equator") {
        x.resize(3);
        x << std::cos(u), std::sin(u), 0.0;
        return x;
    }
    if (kind_ == "halfplane_vertical") {
        x.resize(2);
        x << 0.0, level_ * std::exp(u);
        return x;
    }
    throw GeobeamError("eval: unknown submanifold kind");
}

Vec Submanifold::tangent(double u) const {
    Vec t;
    if (kind_ == "point") throw GeobeamError("tangent: H is a point");
    if (kind_ == "torus_circle") {
        t.resize(2);
        t << 1.0, 0.0;
        return t;
    }
    if (kind_ == "sphere_equator") {
        t.resize(3);
        t << -std::sin(u), std::cos(u), 0.0;
        return t;
    }
    if (kind_ == "halfplane_vertical") {
        t.resize(2);
        t << 0.0, level_ * std::exp(u);  // unit in the hyperbolic metric
        return t;
    }
    throw GeobeamError("tangent: unknown submanifold kind");
}

double Submanifold::length() const {
    if (kind_ == "point") return 0.0;
    return hi_ - lo_;
}

double Submanifold::nearest_param(const Vec& x) const {
    if (kind_ == "point") return 0.0;
    if (kind_ == "torus_circle") {
        const auto& torus = dynamic_cast<const FlatTorus&>(*model_);
        double u = x[0];
        const double p = torus.periods()[0];
        u -= std::floor(u / p) * p;
        return u;
    }
    if (kind_ == "sphere_equator") {
        double u = std::atan2(x[1], x[0]);
        if (u < 0) u += 2.0 * M_PI;
        return u;
    }
    if (kind_ == "halfplane_vertical") return std::clamp(std::log(x[1] / level_), lo_, hi_);
    throw GeobeamError("nearest_param: unknown kind");
}

double Submanifold::base_offset(const Vec& x) const {
    if (kind_ == "torus_circle") {
        const auto& torus = dynamic_cast<const FlatTorus&>(*model_);
        const double p = torus.periods()[1];
        double d = x[1] - level_;
        d -= std::round(d / p) * p;
        return d;
    }
    if (kind_ == "sphere_equator") return x[2];
    if (kind_ == "halfplane_vertical") return std::asinh(x[0] / x[1]);
    throw GeobeamError("base_offset: points have no single offset");
}

bool Submanifold::is_geodesic() const {
    return kind_ == "torus_circle" || kind_ == "sphere_equator" ||
           kind_ == "halfplane_vertical";
}

// ---------------------------------------------------------------------------
// SN*H sampling

namespace {

// g-orthonormal basis of the tangent space at x (deterministic).
Mat tangent_basis(const Manifold& m, const Vec& x) {
    const int cd = m.coord_dim();
    const int n = m.dim();
    Mat B(cd, n);
    int col = 0;
    for (int i = 0; i < cd && col < n; ++i) {
        Vec e = Vec::Zero(cd);
        e[i] = 1.0;
        e = m.project_tangent(x, e);
        for (int j = 0; j < col; ++j) e -= m.inner(x, e, B.col(j)) * B.col(j);
        const double ne = m.norm(x, e);
        if (ne < 1e-8) continue;
        B.col(col++) = e / ne;
    }
    if (col != n) throw NumericError("tangent_basis: degenerate chart point");
    return B;
}

// unit normal of a curve H at parameter u (surfaces)
Vec curve_normal(const Submanifold& H, double u) {
    const Manifold& m = H.model();
    const Vec x = H.eval(u);
    const Vec T = H.tangent(u);
    const Mat B = tangent_basis(m, x);
    Vec Tn = T / m.norm(x, T);
    for (int j = 0; j < B.cols(); ++j) {
        Vec e = B.col(j) - m.inner(x, B.col(j), Tn) * Tn;
        const double ne = m.norm(x, e);
        if (ne > 1e-6) return e / ne;
    }
    throw NumericError("curve_normal: no normal direction found");
}

double injectivity_estimate(const Manifold& m) {
    if (const auto* t = dynamic_cast<const FlatTorus*>(&m))
        return 0.49 * t->periods().minCoeff();
    if (dynamic_cast<const RoundSphere*>(&m) != nullptr) return 0.9 * M_PI;
    if (dynamic_cast<const HyperbolicHalfPlane*>(&m) != nullptr)
        return std::numeric_limits<double>::infinity();
    return 0.5;  // warped patch: local use only
}

Vec transport_vector(const Manifold& m, const Vec& xa, const Vec& xb, const Vec& w) {
    if (dynamic_cast<const FlatTorus*>(&m) != nullptr) return w;
    if (const auto* s = dynamic_cast<const RoundSphere*>(&m))
        return s->transport_closed_form(xa, xb, w);
    const double d = m.base_distance(xa, xb);
    if (d < 1e-14) return w;
    Vec x = xa;
    Vec v = m.connecting_direction(xa, xb);
    Vec wt = w;
    const int steps = std::max(8, static_cast<int>(std::ceil(d / 0.01)));
    const double h = d / steps;
    for (int i = 0; i < steps; ++i) {
        auto rhs = [&](const Vec& xx, const Vec& vv, const Vec& ww) {
            return std::make_tuple(vv, m.geodesic_accel(xx, vv), m.transport_rhs(xx, vv, ww));
        };
        const auto [k1x, k1v, k1w] = rhs(x, v, wt);
        const auto [k2x, k2v, k2w] = rhs(x + 0.5 * h * k1x, v + 0.5 * h * k1v, wt + 0.5 * h * k1w);
        const auto [k3x, k3v, k3w] = rhs(x + 0.5 * h * k2x, v + 0.5 * h * k2v, wt + 0.5 * h * k2w);
        const auto [k4x, k4v, k4w] = rhs(x + h * k3x, v + h * k3v, wt + h * k3w);
        x += h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x);
        v += h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v);
        wt += h / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w);
        m.normalize_state(x, &v);
    }
    return wt;
}

}  // namespace

std::vector<ConormalPoint> sample_snh(const Submanifold& H, double spacing) {
    if (spacing <= 0) throw DomainError("sample_snh: spacing must be positive");
    const Manifold& m = H.model();
    std::vector<ConormalPoint> out;
    const double step = 0.9 * spacing;
    if (H.is_point()) {
        const Vec x0 = H.eval(0);
        const Mat B = tangent_basis(m, x0);
        if (m.dim() == 2) {
            const int count = std::max(4, static_cast<int>(std::ceil(2.0 * M_PI / step)));
            for (int j = 0; j < count; ++j) {
                const double th = 2.0 * M_PI * j / count;
                const Vec v = std::cos(th) * B.col(0) + std::sin(th) * B.col(1);
                out.push_back({0.0, th, make_phase_point(m, x0, v)});
            }
        } else {
            // Fibonacci net on the direction sphere (n = 3)
            const int count =
                std::max(16, static_cast<int>(std::ceil(4.0 * M_PI / (step * step))));
            const double golden = M_PI * (3.0 - std::sqrt(5.0));
            for (int j = 0; j < count; ++j) {
                const double z = 1.0 - 2.0 * (j + 0.5) / count;
                const double rad = std::sqrt(std::max(0.0, 1.0 - z * z));
                const double th = golden * j;
                const Vec v = rad * std::cos(th) * B.col(0) + rad * std::sin(th) * B.col(1) +
                              z * B.col(2);
                out.push_back({0.0, th, make_phase_point(m, x0, v)});
            }
        }
        return out;
    }
    // curve on a surface: two conormal branches per base sample
    const double len = H.length();
    const int count = std::max(2, static_cast<int>(std::ceil(len / step)));
    for (int i = 0; i < count; ++i) {
        const double u =
            H.param_lo() + (H.param_periodic() ? len * i / count : len * (i + 0.5) / count);
        const Vec x = H.eval(u);
        const Vec nu = curve_normal(H, u);
        out.push_back({u, +1.0, make_phase_point(m, x, nu)});
        out.push_back({u, -1.0, make_phase_point(m, x, Vec(-nu))});
    }
    return out;
}

double sasaki_distance(const Manifold& m, const PhasePoint& a, const PhasePoint& b,
                       bool* flagged) {
    if (flagged != nullptr) *flagged = false;
    const double db = m.base_distance(a.x, b.x);
    const Vec va = m.cotangent_to_tangent(a.x, a.xi);
    const Vec vb = m.cotangent_to_tangent(b.x, b.xi);
    double fiber;
    if (db > injectivity_estimate(m)) {
        if (flagged != nullptr) *flagged = true;
        const Vec pva = m.project_tangent(b.x, va);
        const double n = m.norm(b.x, pva);
        const double ip =
            n > 1e-12 ? std::clamp(m.inner(b.x, pva / n, vb), -1.0, 1.0) : 0.0;
        fiber = std::acos(ip);
    } else if (db < 1e-14) {
        const double ip = std::clamp(m.inner(a.x, va, vb), -1.0, 1.0);
        fiber = std::acos(ip);
    } else {
        Vec pva = transport_vector(m, a.x, b.x, va);
        pva = m.project_tangent(b.x, pva);
        const double n = m.norm(b.x, pva);
        if (n > 1e-12) pva /= n;
        const double ip = std::clamp(m.inner(b.x, pva, vb), -1.0, 1.0);
        fiber = std::acos(ip);
    }
    return std::sqrt(db * db + fiber * fiber);
}

// ---------------------------------------------------------------------------
// Defining function

int DefiningFunction::components() const { return H_->model().dim() + 1; }

Vec DefiningFunction::operator()(const PhasePoint& q) const {
    const Submanifold& H = *H_;
    const Manifold& m = H.model();
    const int n = m.dim();
    Vec F = Vec::Zero(n + 1);
    int idx = 0;
    if (H.is_point()) {
        if (const auto* torus = dynamic_cast<const FlatTorus*>(&m)) {
            const Vec d = torus->wrapped_diff(H.eval(0), q.x);
            for (int i = 0; i < n; ++i) F[idx++] = d[i];
        } else if (dynamic_cast<const RoundSphere*>(&m) != nullptr) {
            const Vec x0 = H.eval(0);
            const Mat B = tangent_basis(m, x0);
            for (int i = 0; i < n; ++i) F[idx++] = B.col(i).dot(q.x - x0);
        } else {
            const Vec x0 = H.eval(0);
            for (int i = 0; i < m.coord_dim() && idx < n; ++i)
                F[idx++] = (q.x[i] - x0[i]) / x0[1];
        }
    } else {
        F[idx++] = H.base_offset(q.x);  // base defining function through pi
        const double u = H.nearest_param(q.x);
        F[idx++] = q.xi.dot(H.tangent(u));  // tangential covector component
    }
    F[idx] = m.norm(q.x, m.cotangent_to_tangent(q.x, q.xi)) - 1.0;
    return F;
}

DefiningFunction defining_function(const Submanifold& H, Rng& rng) {
    DefiningFunction F;
    F.H_ = &H;
    const Manifold& m = H.model();
    const int cd = m.coord_dim();

    const auto fine = sample_snh(H, 0.02);
    const auto coarse = sample_snh(H, 0.1);

    auto dist_to_snh = [&](const PhasePoint& q) {
        // SN*H lives on the unit-covector level: the distance picks up the
        // radial offset |xi|_g - 1 on top of the unit-bundle Sasaki distance
        const double radial = m.norm(q.x, m.cotangent_to_tangent(q.x, q.xi)) - 1.0;
        double best = std::numeric_limits<double>::infinity();
        for (const auto& p : fine) best = std::min(best, sasaki_distance(m, q, p.rho));
        return std::sqrt(best * best + radial * radial);
    };
    auto perturb = [&](const ConormalPoint& cp, double delta) {
        PhasePoint q = cp.rho;
        Vec dx = rng.unit_vector(cd);
        dx = m.project_tangent(q.x, dx);
        q.x += delta * 0.7 * dx;
        Vec x2 = q.x;
        m.normalize_state(x2, nullptr);
        q.x = x2;
        const Vec dxi = rng.unit_vector(cd);
        q.xi += delta * 0.7 * dxi;
        return q;
    };
    auto comparable_at = [&](double delta) {
        for (int trial = 0; trial < 32; ++trial) {
            const auto& cp = coarse[rng.uniform_int(static_cast<int>(coarse.size()))];
            const PhasePoint q = perturb(cp, delta);
            if (!m.in_domain(q.x)) continue;
            const double d = dist_to_snh(q);
            if (d < 1e-9 || d > 2.5 * delta) continue;
            const double f = F(q).norm();
            if (f < 0.5 * d - 1e-9 || f > 2.0 * d + 1e-9) return false;
        }
        return true;
    };
    double lo = 0.0, hi = 0.5;
    if (comparable_at(hi)) {
        F.delta_F_ = hi;
    } else {
        for (int round = 0; round < 6; ++round) {
            const double mid = 0.5 * (lo + hi);
            if (comparable_at(mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        F.delta_F_ = lo;
    }
    if (F.delta_F_ <= 0.0)
        throw NumericError("defining_function: comparability failed at all radii");

    // right-inverse norm by finite differences at sampled conormal points
    double worst = 0.0;
    const double h = 1e-5;
    for (int s = 0; s < 16; ++s) {
        const auto& cp = coarse[rng.uniform_int(static_cast<int>(coarse.size()))];
        std::vector<Vec> cols;
        for (int i = 0; i < cd; ++i) {
            Vec e = Vec::Zero(cd);
            e[i] = 1.0;
            const Vec et = m.project_tangent(cp.rho.x, e);
            if (et.norm() < 1e-9) continue;
            PhasePoint qp = cp.rho, qm = cp.rho;
            qp.x += h * et;
            qm.x -= h * et;
            Vec xp = qp.x, xm = qm.x;
            m.normalize_state(xp, nullptr);
            m.normalize_state(xm, nullptr);
            qp.x = xp;
            qm.x = xm;
            cols.push_back((F(qp) - F(qm)) / (2 * h));
        }
        for (int i = 0; i < cd; ++i) {
            PhasePoint qp = cp.rho, qm = cp.rho;
            qp.xi[i] += h;
            qm.xi[i] -= h;
            cols.push_back((F(qp) - F(qm)) / (2 * h));
        }
        Mat J(F.components(), static_cast<int>(cols.size()));
        for (std::size_t c = 0; c < cols.size(); ++c) J.col(static_cast<int>(c)) = cols[c];
        Eigen::JacobiSVD<Mat> svd(J);
        const double smin = svd.singularValues().tail(1)[0];
        if (smin > 1e-12) worst = std::max(worst, 1.0 / smin);
    }
    F.rinv_bound_ = worst;
    return F;
}

Vec psi_eval(const DefiningFunction& F, const Manifold& m, const PhasePoint& rho, double t) {
    return F(flow(m, rho, t));
}

// ---------------------------------------------------------------------------
// Tube membership

bool tube_membership(const Manifold& m, const Tube& tube, const PhasePoint& q) {
    const double horizon = tube.tau + tube.r;
    const double sample_step = tube.r / 4.0;
    FlowOptions fopts;
    fopts.dt = std::min(5e-3, tube.r / 8.0);  // orbit sampling, not high-accuracy flow
    double best = sasaki_distance(m, q, tube.center.rho);
    double best_t = 0.0;
    if (best <= tube.r) return true;
    for (int side = -1; side <= 1; side += 2) {
        PhasePoint cur = q;
        double elapsed = 0.0;
        while (elapsed + sample_step <= horizon + 1e-12) {
            try {
                cur = flow(m, cur, side * sample_step, fopts);
            } catch (const DomainError&) {
                break;
            }
            elapsed += sample_step;
            const double d = sasaki_distance(m, cur, tube.center.rho);
            if (d <= tube.r) return true;
            if (d < best) {
                best = d;
                best_t = side * elapsed;
            }
        }
    }
    // marginal case: the coarse scan loses up to step/2 of orbit arc length,
    // so refine the minimizing time
    if (best <= 1.5 * tube.r) {
        double lo = std::max(-horizon, best_t - sample_step);
        double hi = std::min(horizon, best_t + sample_step);
        auto dist_at = [&](double t) {
            try {
                return sasaki_distance(m, flow(m, q, t, fopts), tube.center.rho);
            } catch (const DomainError&) {
                return std::numeric_limits<double>::infinity();
            }
        };
        const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
        double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
        double f1 = dist_at(x1), f2 = dist_at(x2);
        for (int it = 0; it < 24; ++it) {
            if (std::min(f1, f2) <= tube.r) return true;
            if (f1 < f2) {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - gr * (hi - lo);
                f1 = dist_at(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + gr * (hi - lo);
                f2 = dist_at(x2);
            }
        }
        return std::min(f1, f2) <= tube.r;
    }
    return false;
}

// ---------------------------------------------------------------------------
// tau_inj

double tau_inj(const Submanifold& H, double spacing) {
    const Manifold& m = H.model();
    const int cd = m.coord_dim();
    auto net = sample_snh(H, spacing);
    {
        // fiber-rotated satellites make focal collapse visible to the sampler
        std::vector<ConormalPoint> sat;
        for (const auto& cp : net) {
            const Vec v = m.cotangent_to_tangent(cp.rho.x, cp.rho.xi);
            const Mat B = tangent_basis(m, cp.rho.x);
            for (int j = 0; j < B.cols(); ++j) {
                Vec e = B.col(j) - m.inner(cp.rho.x, B.col(j), v) * v;
                const double ne = m.norm(cp.rho.x, e);
                if (ne < 1e-6) continue;
                e /= ne;
                for (int sgn = -1; sgn <= 1; sgn += 2) {
                    const Vec vr = std::cos(spacing) * v + sgn * std::sin(spacing) * e;
                    ConormalPoint c2 = cp;
                    c2.rho = make_phase_point(m, cp.rho.x, vr);
                    sat.push_back(c2);
                }
                break;
            }
        }
        net.insert(net.end(), sat.begin(), sat.end());
    }

    const double tol = 0.5 * spacing;
    const double dt_grid = 0.5 * tol;
    const int half_steps = static_cast<int>(std::ceil(1.0 / dt_grid));
    const int ncols = 2 * half_steps + 1;
    const int edim = 2 * cd;

    std::vector<std::vector<Vec>> pos(net.size());
    std::vector<Vec> starts(net.size());
    for (std::size_t i = 0; i < net.size(); ++i) {
        pos[i].assign(ncols, Vec());
        const Vec v0 = m.cotangent_to_tangent(net[i].rho.x, net[i].rho.xi);
        Vec e(edim);
        e << net[i].rho.x, v0;
        starts[i] = e;
        pos[i][half_steps] = e;
        for (int side = -1; side <= 1; side += 2) {
            Vec x = net[i].rho.x;
            Vec v = v0;
            for (int k = 1; k <= half_steps; ++k) {
                rk4_geodesic_step(m, x, v, side * dt_grid);
                v /= m.norm(x, v);
                if (!m.in_domain(x)) break;
                Vec ee(edim);
                ee << x, v;
                pos[i][half_steps + side * k] = ee;
            }
        }
    }

    auto key_hash = [&](const Vec& p, double cell) {
        long long h = 1469598103934665603ll;
        for (int c = 0; c < edim; ++c) {
            const auto cellidx = static_cast<long long>(std::floor(p[c] / cell));
            h = (h ^ cellidx) * 1099511628211ll;
        }
        return h;
    };

    auto has_collision = [&](double tau) {
        const int kmax = std::min(half_steps, static_cast<int>(std::floor(tau / dt_grid)));
        const double cell = 2.0 * tol;
        std::unordered_map<long long, std::vector<std::pair<int, int>>> hash;
        for (std::size_t i = 0; i < net.size(); ++i)
            for (int k = -kmax; k <= kmax; ++k) {
                const Vec& p = pos[i][half_steps + k];
                if (p.size() == 0) continue;
                hash[key_hash(p, cell)].push_back({static_cast<int>(i), k});
            }
        for (std::size_t ii = 0; ii < net.size(); ++ii) {
            for (int k = -kmax; k <= kmax; ++k) {
                const Vec& p = pos[ii][half_steps + k];
                if (p.size() == 0) continue;
                for (int mask = 0; mask < (1 << edim); ++mask) {
                    Vec q = p;
                    for (int c = 0; c < edim; ++c)
                        q[c] += ((mask >> c) & 1) ? 0.5 * cell : -0.5 * cell;
                    const auto it = hash.find(key_hash(q, cell));
                    if (it == hash.end()) continue;
                    for (const auto& [j, l] : it->second) {
                        if (j < static_cast<int>(ii) ||
                            (j == static_cast<int>(ii) && l <= k))
                            continue;
                        const Vec& pj = pos[j][half_steps + l];
                        if ((p - pj).norm() >= tol) continue;
                        const double dom = std::sqrt(sq((k - l) * dt_grid) +
                                                     (starts[ii] - starts[j]).squaredNorm());
                        if (dom > 6.0 * tol) return true;
                    }
                }
            }
        }
        return false;
    };

    if (!has_collision(1.0)) return 1.0;
    double lo = 0.0, hi = 1.0;
    for (int round = 0; round < 6; ++round) {
        const double mid = 0.5 * (lo + hi);
        if (has_collision(mid)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    return lo;
}

// ---------------------------------------------------------------------------
// Splitting classification

namespace {

Mat orthonormal_cols(const Mat& M) {
    if (M.cols() == 0) return M;
    return Eigen::HouseholderQR<Mat>(M).householderQ() * Mat::Identity(M.rows(), M.cols());
}

std::vector<double> principal_angles(const Mat& A, const Mat& B) {
    if (A.cols() == 0 || B.cols() == 0) return {};
    const Mat Qa = orthonormal_cols(A), Qb = orthonormal_cols(B);
    Eigen::JacobiSVD<Mat> svd(Qa.transpose() * Qb);
    std::vector<double> out;
    for (int i = 0; i < svd.singularValues().size(); ++i)
        out.push_back(std::acos(std::clamp(svd.singularValues()[i], -1.0, 1.0)));
    return out;
}

Mat intersection_basis(const Mat& T, const Mat& E, double tol) {
    if (T.cols() == 0 || E.cols() == 0) return Mat(T.rows(), 0);
    const Mat Qt = orthonormal_cols(T), Qe = orthonormal_cols(E);
    Eigen::JacobiSVD<Mat> svd(Qt.transpose() * Qe, Eigen::ComputeFullU);
    int count = 0;
    for (int i = 0; i < svd.singularValues().size(); ++i)
        if (std::acos(std::clamp(svd.singularValues()[i], -1.0, 1.0)) < tol) ++count;
    Mat out(T.rows(), count);
    for (int i = 0; i < count; ++i) out.col(i) = Qt * svd.matrixU().col(i);
    return out;
}

}  // namespace

SplittingClass classify_subspaces(const Mat& T, const Mat& Eplus, const Mat& Eminus, double tol,
                                  double gray) {
    SplittingClass out;
    const auto ap = principal_angles(T, Eplus);
    const auto am = principal_angles(T, Eminus);
    out.min_gap_angle = M_PI;
    for (double a : ap) {
        if (a < tol) ++out.m_plus;
        if (a >= tol && a < gray) out.indeterminate = true;
        out.min_gap_angle = std::min(out.min_gap_angle, a);
    }
    for (double a : am) {
        if (a < tol) ++out.m_minus;
        if (a >= tol && a < gray) out.indeterminate = true;
        out.min_gap_angle = std::min(out.min_gap_angle, a);
    }
    out.in_M_H = out.m_plus > 0 && out.m_minus > 0;
    if (out.m_plus + out.m_minus >= T.cols()) {
        const Mat Np = intersection_basis(T, Eplus, tol);
        const Mat Nm = intersection_basis(T, Eminus, tol);
        Mat stack(T.rows(), Np.cols() + Nm.cols());
        if (stack.cols() > 0) {
            stack << Np, Nm;
            const auto rest = principal_angles(T, stack);
            double worst = 0;
            for (double a : rest) worst = std::max(worst, a);
            out.in_S_H = worst < gray;
        }
    }
    out.in_A_H = out.in_M_H && out.in_S_H;
    return out;
}

Mat snh_tangent_perp(const Submanifold& H, const ConormalPoint& cp, const Mat& frame0) {
    const Manifold& m = H.model();
    const int p = m.dim() - 1;
    if (H.is_point()) {
        Mat T = Mat::Zero(2 * p, p);
        for (int i = 0; i < p; ++i) T(p + i, i) = 1.0;  // vertical fiber directions
        return T;
    }
    const double du = 1e-4;
    const double u = cp.u;
    auto branch_normal = [&](double uu) {
        Vec nu = curve_normal(H, uu);
        const Vec v0 = m.cotangent_to_tangent(cp.rho.x, cp.rho.xi);
        const Vec nut = transport_vector(m, H.eval(uu), cp.rho.x, nu);
        if (m.inner(cp.rho.x, m.project_tangent(cp.rho.x, nut), v0) < 0) nu = -nu;
        return nu;
    };
    const Vec xp = H.eval(u + du), xm = H.eval(u - du);
    const Vec nup = branch_normal(u + du), num = branch_normal(u - du);
    const Vec dx = (xp - xm) / (2 * du);
    const Vec nup_t = m.project_tangent(cp.rho.x, transport_vector(m, xp, cp.rho.x, nup));
    const Vec num_t = m.project_tangent(cp.rho.x, transport_vector(m, xm, cp.rho.x, num));
    const Vec dnu = (nup_t - num_t) / (2 * du);
    Mat T(2 * p, 1);
    for (int i = 0; i < p; ++i) {
        T(i, 0) = m.inner(cp.rho.x, dx, frame0.col(i));
        T(p + i, 0) = m.inner(cp.rho.x, dnu, frame0.col(i));
    }
    const double n = T.norm();
    if (n < 1e-10) throw NumericError("snh_tangent_perp: degenerate tangent");
    return T / n;
}

SplittingClass classify_splitting(const Submanifold& H, const ConormalPoint& cp,
                                  const SplittingEstimate& sp, const Mat& frame0) {
    if (!sp.usable)
        throw InvariantError(
            "classify_splitting: splitting estimate unusable (non-hyperbolic model?)");
    const Mat T = snh_tangent_perp(H, cp, frame0);
    return classify_subspaces(T, sp.Eplus, sp.Eminus);
}

std::string snh_classification_csv(const Submanifold& H,
                                   const std::vector<ConormalPoint>& net,
                                   const std::vector<SplittingClass>& classes) {
    if (net.size() != classes.size())
        throw DomainError("snh_classification_csv: size mismatch");
    CsvBuilder csv("SN*H classification; u base parameter (arc length); flags 0/1");
    std::vector<std::string> cols{"u"};
    const int cd = H.model().coord_dim();
    for (int i = 0; i < cd; ++i) cols.push_back("x" + std::to_string(i));
    for (int i = 0; i < cd; ++i) cols.push_back("xi" + std::to_string(i));
    for (const char* c : {"m_plus", "m_minus", "in_M_H", "in_S_H", "in_A_H", "indeterminate"})
        cols.push_back(c);
    csv.header(cols);
    for (std::size_t i = 0; i < net.size(); ++i) {
        csv.row_start();
        csv.cell(net[i].u);
        for (int c = 0; c < cd; ++c) csv.cell(net[i].rho.x[c]);
        for (int c = 0; c < cd; ++c) csv.cell(net[i].rho.xi[c]);
        csv.cell(classes[i].m_plus);
        csv.cell(classes[i].m_minus);
        csv.cell(static_cast<int>(classes[i].in_M_H));
        csv.cell(static_cast<int>(classes[i].in_S_H));
        csv.cell(static_cast<int>(classes[i].in_A_H));
        csv.cell(static_cast<int>(classes[i].indeterminate));
        csv.row_end();
    }
    return csv.str();
}

std::pair<double, double> theta_angles(const Vec& v_perp, const Mat& Eplus, const Mat& Eminus) {
    const int pplus = static_cast<int>(Eplus.cols());
    const int pminus = static_cast<int>(Eminus.cols());
    Mat Bmat(v_perp.size(), pplus + pminus);
    Bmat << Eplus, Eminus;
    const Vec coef = Bmat.colPivHouseholderQr().solve(v_perp);
    const double na = (Eplus * coef.head(pplus)).norm();
    const double nb = (Eminus * coef.tail(pminus)).norm();
    const double inf = std::numeric_limits<double>::infinity();
    const double tp = (na < 1e-14) ? inf : nb / na;
    const double tm = (nb < 1e-14) ? inf : na / nb;
    return {tp, tm};
}

}  // namespace geobeam
