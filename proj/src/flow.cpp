#include "geobeam/flow.hpp"

#include "geobeam/io.hpp"

#include <algorithm>
#include <cmath>

namespace geobeam {
namespace {

// Combined state for the linearized flow: geodesic, parallel frame, and the
// two fundamental Jacobi solutions.
struct LinState {
    Vec x, v;
    Mat E;              // coord_dim x (n-1)
    Mat A, Ad, B, Bd;   // (n-1) x (n-1)

    LinState scaled_add(const LinState& k, double h) const {
        LinState r;
        r.x = x + h * k.x;
        r.v = v + h * k.v;
        r.E = E + h * k.E;
        r.A = A + h * k.A;
        r.Ad = Ad + h * k.Ad;
        r.B = B + h * k.B;
        r.Bd = Bd + h * k.Bd;
        return r;
    }
};

LinState lin_rhs(const Manifold& m, const LinState& s) {
    LinState d;
    d.x = s.v;
    d.v = m.geodesic_accel(s.x, s.v);
    d.E.resize(s.E.rows(), s.E.cols());
    for (int i = 0; i < s.E.cols(); ++i) d.E.col(i) = m.transport_rhs(s.x, s.v, s.E.col(i));
    const Mat R = m.curvature_matrix(s.x, s.v, s.E);
    d.A = s.Ad;
    d.Ad = -R * s.A;
    d.B = s.Bd;
    d.Bd = -R * s.B;
    return d;
}

void lin_rk4_step(const Manifold& m, LinState& s, double h) {
    const LinState k1 = lin_rhs(m, s);
    const LinState k2 = lin_rhs(m, s.scaled_add(k1, 0.5 * h));
    const LinState k3 = lin_rhs(m, s.scaled_add(k2, 0.5 * h));
    const LinState k4 = lin_rhs(m, s.scaled_add(k3, h));
    s.x += h / 6.0 * (k1.x + 2 * k2.x + 2 * k3.x + k4.x);
    s.v += h / 6.0 * (k1.v + 2 * k2.v + 2 * k3.v + k4.v);
    s.E += h / 6.0 * (k1.E + 2 * k2.E + 2 * k3.E + k4.E);
    s.A += h / 6.0 * (k1.A + 2 * k2.A + 2 * k3.A + k4.A);
    s.Ad += h / 6.0 * (k1.Ad + 2 * k2.Ad + 2 * k3.Ad + k4.Ad);
    s.B += h / 6.0 * (k1.B + 2 * k2.B + 2 * k3.B + k4.B);
    s.Bd += h / 6.0 * (k1.Bd + 2 * k2.Bd + 2 * k3.Bd + k4.Bd);
}

void renormalize(const Manifold& m, LinState& s, bool full_frame_pass) {
    m.normalize_state(s.x, &s.v);
    const double nv = m.norm(s.x, s.v);
    if (nv < 1e-12) throw NumericError("flow: velocity collapsed");
    s.v /= nv;
    // Keep frame columns tangent (embedded models) every step; full
    // Gram-Schmidt against v only periodically.
    for (int i = 0; i < s.E.cols(); ++i) s.E.col(i) = m.project_tangent(s.x, s.E.col(i));
    if (full_frame_pass) {
        for (int i = 0; i < s.E.cols(); ++i) {
            Vec e = s.E.col(i);
            e -= m.inner(s.x, e, s.v) * s.v;
            for (int j = 0; j < i; ++j) e -= m.inner(s.x, e, s.E.col(j)) * s.E.col(j);
            const double ne = m.norm(s.x, e);
            if (ne < 1e-10) throw NumericError("flow: frame degenerated");
            s.E.col(i) = e / ne;
        }
    }
}

Mat initial_frame(const Manifold& m, const Vec& x, const Vec& v,
                  const std::optional<Mat>& given) {
    const int n = m.dim();
    const int cd = m.coord_dim();
    Mat E(cd, n - 1);
    if (given.has_value()) {
        E = *given;
    } else {
        int col = 0;
        for (int i = 0; i < cd && col < n - 1; ++i) {
            Vec e = Vec::Zero(cd);
            e[i] = 1.0;
            e = m.project_tangent(x, e);
            e -= m.inner(x, e, v) * v;
            for (int j = 0; j < col; ++j) e -= m.inner(x, e, E.col(j)) * E.col(j);
            const double ne = m.norm(x, e);
            if (ne < 1e-8) continue;
            E.col(col++) = e / ne;
        }
        if (col != n - 1) throw NumericError("initial_frame: could not complete frame");
    }
    return E;
}

LinState initial_lin_state(const Manifold& m, const PhasePoint& rho, const FlowOptions& opts) {
    LinState s;
    s.x = rho.x;
    s.v = m.cotangent_to_tangent(rho.x, rho.xi);
    const double nv = m.norm(s.x, s.v);
    if (std::abs(nv - 1.0) > 1e-6)
        throw DomainError("phase point covector is not unit length");
    s.v /= nv;
    s.E = initial_frame(m, s.x, s.v, opts.initial_frame);
    const int p = m.dim() - 1;
    s.A = Mat::Zero(p, p);
    s.Ad = Mat::Identity(p, p);
    s.B = Mat::Identity(p, p);
    s.Bd = Mat::Zero(p, p);
    return s;
}

FlowSegment::State to_state(double t, const LinState& s) {
    return FlowSegment::State{t, s.x, s.v, s.E, s.A, s.Ad, s.B, s.Bd};
}

LinState from_state(const FlowSegment::State& st) {
    return LinState{st.x, st.v, st.frame, st.A, st.Ad, st.B, st.Bd};
}

}  // namespace

void rk4_geodesic_step(const Manifold& m, Vec& x, Vec& v, double h) {
    const Vec k1x = v, k1v = m.geodesic_accel(x, v);
    const Vec x2 = x + 0.5 * h * k1x, v2 = v + 0.5 * h * k1v;
    const Vec k2x = v2, k2v = m.geodesic_accel(x2, v2);
    const Vec x3 = x + 0.5 * h * k2x, v3 = v + 0.5 * h * k2v;
    const Vec k3x = v3, k3v = m.geodesic_accel(x3, v3);
    const Vec x4 = x + h * k3x, v4 = v + h * k3v;
    const Vec k4x = v4, k4v = m.geodesic_accel(x4, v4);
    x += h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x);
    v += h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v);
    m.normalize_state(x, &v);
}

PhasePoint make_phase_point(const Manifold& m, const Vec& x, const Vec& direction) {
    Vec v = m.project_tangent(x, direction);
    const double nv = m.norm(x, v);
    if (nv < 1e-12) throw NumericError("make_phase_point: degenerate direction");
    v /= nv;
    return PhasePoint{x, m.tangent_to_cotangent(x, v)};
}

double phase_distance(const Manifold& m, const PhasePoint& a, const PhasePoint& b) {
    const double db = m.base_distance(a.x, b.x);
    const Vec va = m.cotangent_to_tangent(a.x, a.xi);
    const Vec vb = m.cotangent_to_tangent(b.x, b.xi);
    // Fiber part without transport; adequate for the small distances used in
    // invariant checks (the Sasaki distance lives in the conormal module).
    double c = 0;
    if (m.coord_dim() == static_cast<int>(va.size())) {
        Vec vat = va;
        if (db > 1e-12) {
            // crude transport: project onto tangent space at b.x
            vat = m.project_tangent(b.x, va);
            const double n = m.norm(b.x, vat);
            if (n > 1e-12) vat /= n;
        }
        const double ip = std::clamp(m.inner(b.x, vat, vb), -1.0, 1.0);
        c = std::acos(ip);
    }
    return std::sqrt(db * db + c * c);
}

PhasePoint flow(const Manifold& m, const PhasePoint& rho, double t, const FlowOptions& opts) {
    Vec x = rho.x;
    Vec v = m.cotangent_to_tangent(x, rho.xi);
    const double nv = m.norm(x, v);
    if (std::abs(nv - 1.0) > 1e-6) throw DomainError("flow: covector not unit");
    v /= nv;
    const double h = (t >= 0 ? opts.dt : -opts.dt);
    if (std::abs(h) < 1e-14) throw NumericError("flow: step-size underflow");
    const long nsteps = static_cast<long>(std::floor(std::abs(t) / opts.dt));
    for (long i = 0; i < nsteps; ++i) {
        rk4_geodesic_step(m, x, v, h);
        const double n2 = m.norm(x, v);
        v /= n2;
        if (!m.in_domain(x)) throw DomainError("flow: orbit left the chart domain");
    }
    const double rem = t - nsteps * h;
    if (std::abs(rem) > 1e-14) {
        rk4_geodesic_step(m, x, v, rem);
        v /= m.norm(x, v);
        if (!m.in_domain(x)) throw DomainError("flow: orbit left the chart domain");
    }
    return PhasePoint{x, m.tangent_to_cotangent(x, v)};
}

FlowSegment propagate_linearization(const Manifold& m, const PhasePoint& rho, double T,
                                    const FlowOptions& opts) {
    FlowSegment seg;
    seg.model = &m;
    seg.dt = opts.dt;
    seg.t_requested = T;
    LinState s = initial_lin_state(m, rho, opts);
    const double h = (T >= 0 ? opts.dt : -opts.dt);
    const long nsteps = static_cast<long>(std::llround(std::abs(T) / opts.dt));
    seg.states.reserve(nsteps + 1);
    seg.states.push_back(to_state(0.0, s));
    for (long i = 1; i <= nsteps; ++i) {
        lin_rk4_step(m, s, h);
        renormalize(m, s, i % opts.reorthonormalize_every == 0);
        if (!m.in_domain(s.x)) break;
        seg.states.push_back(to_state(i * h, s));
    }
    seg.t_reached = seg.states.back().t;
    if (std::abs(std::abs(T) - nsteps * opts.dt) > 1e-12 && seg.complete()) {
        // non-multiple horizon: append exact endpoint
        const double rem = T - seg.states.back().t;
        lin_rk4_step(m, s, rem);
        renormalize(m, s, true);
        seg.states.push_back(to_state(T, s));
        seg.t_reached = T;
    }
    return seg;
}

FlowSegment::State FlowSegment::state_at_time(double t) const {
    const double lo = std::min(0.0, t_reached), hi = std::max(0.0, t_reached);
    if (t < lo - 1e-9 || t > hi + 1e-9)
        throw DomainError("state_at_time: outside segment window");
    const double h = states.size() > 1 ? states[1].t : dt;
    std::size_t i = (std::abs(h) > 0) ? static_cast<std::size_t>(std::floor(std::abs(t) / std::abs(h)))
                                      : 0;
    i = std::min(i, states.size() - 1);
    // step back so that the residual has the sign of the segment
    while (i > 0 && std::abs(states[i].t) > std::abs(t) + 1e-12) --i;
    LinState s = from_state(states[i]);
    double rem = t - states[i].t;
    const double hfine = (rem >= 0 ? 1.0 : -1.0) * std::min(std::abs(rem), dt);
    while (std::abs(rem) > 1e-13) {
        const double step = (std::abs(rem) < std::abs(hfine)) ? rem : hfine;
        lin_rk4_step(*model, s, step);
        rem -= step;
    }
    FlowSegment::State out = to_state(t, s);
    return out;
}

Mat FlowSegment::dflow_perp(const State& s) const {
    const int p = s.A.rows();
    Mat M(2 * p, 2 * p);
    M.block(0, 0, p, p) = s.B;
    M.block(0, p, p, p) = s.A;
    M.block(p, 0, p, p) = s.Bd;
    M.block(p, p, p, p) = s.Ad;
    return M;
}

double FlowSegment::max_wronskian_drift() const {
    double worst = 0;
    for (const auto& s : states) {
        const Mat W = s.Ad.transpose() * s.A - s.A.transpose() * s.Ad;
        worst = std::max(worst, W.cwiseAbs().maxCoeff());
    }
    return worst;
}

double FlowSegment::max_symplectic_drift() const {
    const int p = states.front().A.rows();
    double worst = 0;
    for (const auto& s : states) {
        const Mat W = s.Bd.transpose() * s.A - s.B.transpose() * s.Ad + Mat::Identity(p, p);
        worst = std::max(worst, W.cwiseAbs().maxCoeff());
    }
    return worst;
}

std::string segment_csv(const FlowSegment& seg, std::size_t stride) {
    CsvBuilder csv("flow segment; t in flow units; x chart/embedding coords; xi covector");
    std::vector<std::string> cols{"t"};
    const int cd = seg.model->coord_dim();
    for (int i = 0; i < cd; ++i) cols.push_back("x" + std::to_string(i));
    for (int i = 0; i < cd; ++i) cols.push_back("xi" + std::to_string(i));
    cols.push_back("detA");
    cols.push_back("sigma_min_A");
    csv.header(cols);
    for (std::size_t i = 0; i < seg.states.size(); i += stride) {
        const auto& st = seg.states[i];
        csv.row_start();
        csv.cell(st.t);
        for (int c = 0; c < cd; ++c) csv.cell(st.x[c]);
        const Vec xi = seg.model->tangent_to_cotangent(st.x, st.v);
        for (int c = 0; c < cd; ++c) csv.cell(xi[c]);
        csv.cell(st.A.determinant());
        Eigen::JacobiSVD<Mat> svd(st.A);
        csv.cell(svd.singularValues().tail(1)[0]);
        csv.row_end();
    }
    return csv.str();
}

double operator_norm_dflow(const FlowSegment& seg, double t) {
    const auto s = seg.state_at_time(t);
    const int p = s.A.rows();
    Mat V(2 * p, p);
    V.topRows(p) = s.A;
    V.bottomRows(p) = s.Ad;
    Eigen::JacobiSVD<Mat> svd(V);
    return std::max(1.0, svd.singularValues()[0]);
}

// ---------------------------------------------------------------------------
// Conjugate points

namespace {

double det_at(const FlowSegment::State& s) { return s.A.determinant(); }

double sigma_min(const Mat& A) {
    Eigen::JacobiSVD<Mat> svd(A);
    return svd.singularValues().tail(1)[0];
}

double conj_scale(const FlowSegment::State& s) {
    return s.A.norm() + s.Ad.norm();
}

}  // namespace

ConjugateReport conjugate_points(const FlowSegment& seg, double window_lo, double window_hi,
                                 double tol) {
    ConjugateReport rep;
    rep.window_lo = window_lo;
    rep.window_hi = window_hi;
    rep.tol = tol;
    if (seg.states.size() < 3) return rep;
    const double tmin = std::max(window_lo, 10.0 * seg.dt);

    // candidate brackets from the stored grid
    struct Candidate {
        std::size_t i;  // left grid index
        bool sign_change;
    };
    std::vector<Candidate> cands;
    const auto& st = seg.states;
    std::vector<double> dets(st.size()), smins(st.size());
    for (std::size_t i = 0; i < st.size(); ++i) {
        dets[i] = det_at(st[i]);
        smins[i] = sigma_min(st[i].A);
    }
    for (std::size_t i = 0; i + 1 < st.size(); ++i) {
        const double t0 = st[i].t, t1 = st[i + 1].t;
        if (std::max(t0, t1) < tmin || std::min(t0, t1) > window_hi) continue;
        if (dets[i] == 0.0) continue;  // handled by neighbor bracket
        if (dets[i] * dets[i + 1] < 0.0) {
            cands.push_back({i, true});
        }
    }
    // local sigma_min dips that are not sign changes (even multiplicity)
    for (std::size_t i = 1; i + 1 < st.size(); ++i) {
        if (st[i].t < tmin || st[i].t > window_hi) continue;
        const double scale = std::max(conj_scale(st[i]), 1e-12);
        if (smins[i] <= smins[i - 1] && smins[i] <= smins[i + 1] &&
            smins[i] < 0.05 * scale) {
            bool covered = false;
            for (const auto& c : cands)
                if (c.i == i || c.i + 1 == i || c.i == i + 1) covered = true;
            if (!covered) cands.push_back({i, false});
        }
    }

    auto A_of = [&](double t) { return seg.state_at_time(t); };

    std::vector<std::pair<double, int>> found;
    for (const auto& c : cands) {
        double t_star;
        if (c.sign_change) {
            double lo = st[c.i].t, hi = st[c.i + 1].t;
            if (lo > hi) std::swap(lo, hi);
            double flo = A_of(lo).A.determinant();
            for (int it = 0; it < 60 && hi - lo > 1e-11; ++it) {
                const double mid = 0.5 * (lo + hi);
                const double fm = A_of(mid).A.determinant();
                if (flo * fm <= 0) {
                    hi = mid;
                } else {
                    lo = mid;
                    flo = fm;
                }
            }
            t_star = 0.5 * (lo + hi);
        } else {
            // golden-section on sigma_min over the neighboring cells
            double lo = st[c.i - 1].t, hi = st[c.i + 1].t;
            if (lo > hi) std::swap(lo, hi);
            const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
            double a = lo, b = hi;
            double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
            double f1 = sigma_min(A_of(x1).A), f2 = sigma_min(A_of(x2).A);
            for (int it = 0; it < 80 && b - a > 1e-10; ++it) {
                if (f1 < f2) {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = b - gr * (b - a);
                    f1 = sigma_min(A_of(x1).A);
                } else {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = a + gr * (b - a);
                    f2 = sigma_min(A_of(x2).A);
                }
            }
            t_star = 0.5 * (a + b);
        }
        if (t_star < tmin || t_star > window_hi) continue;
        const auto s_star = A_of(t_star);
        const double scale = std::max(conj_scale(s_star), 1e-12);
        Eigen::JacobiSVD<Mat> svd(s_star.A);
        int mult = 0;
        for (int k = 0; k < svd.singularValues().size(); ++k)
            if (svd.singularValues()[k] < tol * scale) ++mult;
        if (mult == 0) continue;
        found.emplace_back(t_star, mult);
    }
    std::sort(found.begin(), found.end());
    // dedupe refinements that converged to the same zero
    for (const auto& f : found) {
        if (!rep.points.empty() && std::abs(rep.points.back().first - f.first) < 1e-6) continue;
        rep.points.push_back(f);
    }
    return rep;
}

PandaResult panda_subspace(const FlowSegment& seg, double t0, double eps, int m_max) {
    const int p = seg.states.front().A.rows();
    const ConjugateReport rep = conjugate_points(seg, t0 - 2 * eps, t0 + 2 * eps);
    int m_found = 0;
    for (const auto& c : rep.points) m_found += c.second;
    if (m_found > m_max)
        throw InvariantError("panda_subspace: more conjugate points than allowed");

    // kernel directions at the conjugate times
    Mat K(p, m_found);
    int col = 0;
    for (const auto& c : rep.points) {
        const auto s = seg.state_at_time(c.first);
        Eigen::JacobiSVD<Mat> svd(s.A, Eigen::ComputeFullV);
        for (int k = 0; k < c.second; ++k) K.col(col++) = svd.matrixV().col(p - 1 - k);
    }

    PandaResult out;
    const int keep = p - m_found;
    if (keep <= 0) {
        out.basis = Mat::Zero(p, 0);
        out.vacuous = true;
        return out;
    }
    if (m_found == 0) {
        out.basis = Mat::Identity(p, p);
    } else {
        // orthogonal complement via full SVD of K^T
        Eigen::JacobiSVD<Mat> svd(K.transpose(), Eigen::ComputeFullV);
        out.basis = svd.matrixV().rightCols(keep);
    }

    double worst = 1.0;
    const int steps = 100;
    for (int i = 0; i <= steps; ++i) {
        const double t = t0 - eps + (2.0 * eps * i) / steps;
        const auto s = seg.state_at_time(t);
        for (int j = 0; j < out.basis.cols(); ++j) {
            const Vec w = out.basis.col(j);
            const double num = std::sqrt((s.A * w).squaredNorm() + (s.Ad * w).squaredNorm());
            const double den = (s.A * w).norm();
            if (den < 1e-14) throw NumericError("panda_subspace: dpi dphi vanished on basis");
            worst = std::max(worst, num / den);
        }
    }
    out.factor = worst;
    out.c_hat = (worst * worst - 1.0) * eps * eps;
    return out;
}

// ---------------------------------------------------------------------------
// Riccati comparison

namespace {

struct RiccatiPiece {
    double a, b;
};

void riccati_check_interval(const std::function<Mat(double)>& R, int dim, double k,
                            double a, double b, int grid, const std::vector<Vec>& probes,
                            RiccatiReport& rep, int depth) {
    if (depth > 8 || b - a < 5e-2) return;
    const int nsteps = std::max(2000, grid * 40);
    const double h = (b - a) / nsteps;

    // pass 1: integrate Y(a)=0, Y'(a)=Id and locate singular regions of Y
    std::vector<Mat> Ys(nsteps + 1), Yds(nsteps + 1);
    Ys[0] = Mat::Zero(dim, dim);
    Yds[0] = Mat::Identity(dim, dim);
    {
        Mat Y = Ys[0], Yd = Yds[0];
        for (int i = 0; i < nsteps; ++i) {
            const double t = a + i * h;
            auto f = [&](double tt, const Mat& Yc, const Mat& Ydc) {
                return std::make_pair(Ydc, Mat(-R(tt) * Yc));
            };
            const auto [k1y, k1d] = f(t, Y, Yd);
            const auto [k2y, k2d] = f(t + 0.5 * h, Y + 0.5 * h * k1y, Yd + 0.5 * h * k1d);
            const auto [k3y, k3d] = f(t + 0.5 * h, Y + 0.5 * h * k2y, Yd + 0.5 * h * k2d);
            const auto [k4y, k4d] = f(t + h, Y + h * k3y, Yd + h * k3d);
            Y += h / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y);
            Yd += h / 6.0 * (k1d + 2 * k2d + 2 * k3d + k4d);
            Ys[i + 1] = Y;
            Yds[i + 1] = Yd;
        }
    }
    std::vector<double> singular_times;
    double prev_det = 0.0;
    double run_max_sigma = 0.0;
    const int i_skip = std::max(1, static_cast<int>(0.03 * nsteps));
    for (int i = i_skip; i <= nsteps; ++i) {
        const double det = Ys[i].determinant();
        const double smin = sigma_min(Ys[i]);
        const bool crossing = prev_det != 0.0 && det * prev_det < 0.0;
        // a collapse of the smallest singular value relative to its own
        // running peak signals an approaching conjugate time; the initial
        // ramp from Y(a) = 0 never trips this
        const bool collapsed = smin < 0.05 * run_max_sigma;
        run_max_sigma = std::max(run_max_sigma, smin);
        prev_det = det;
        if (crossing || collapsed) {
            const double tc = a + i * h;
            if (singular_times.empty() || tc - singular_times.back() > 0.08 * (b - a))
                singular_times.push_back(tc);
            else
                singular_times.back() = tc;  // extend the same region
        }
    }

    if (!singular_times.empty()) {
        ++rep.splits;
        const double margin = 0.05 * (b - a);
        double left = a;
        for (double tc : singular_times) {
            riccati_check_interval(R, dim, k, left, tc - margin, grid, probes, rep, depth + 1);
            left = tc + margin;
        }
        riccati_check_interval(R, dim, k, left, b, grid, probes, rep, depth + 1);
        return;
    }

    // pass 2: clean interval, evaluate the comparison at the check grid
    for (int j = 0; j < grid; ++j) {
        const double t = a + (j + 0.5) * (b - a) / grid;
        const int i = std::min(nsteps, static_cast<int>(std::lround((t - a) / h)));
        if (i < 1) continue;
        const Mat& Y = Ys[i];
        if (sigma_min(Y) < 1e-12) continue;
        const double ti = a + i * h;
        const Mat Yinv = Y.inverse();
        const Mat U = 0.5 * (Yds[i] * Yinv + (Yds[i] * Yinv).transpose());
        const double bound = k * std::max(std::abs(1.0 / std::tanh(k * (ti - a))),
                                          std::abs(1.0 / std::tanh(k * (ti - b))));
        for (const auto& xprobe : probes) {
            const double val = std::abs(xprobe.dot(U * xprobe));
            const double viol = val - bound;
            if (viol > rep.max_violation) {
                rep.max_violation = viol;
                rep.worst_time = ti;
            }
        }
    }
}

}  // namespace

RiccatiReport riccati_bound_check(const std::function<Mat(double)>& R, int dim, double k,
                                  double a, double b, int grid, int probes, double tolerance,
                                  Rng* rng) {
    if (k <= 0) throw DomainError("riccati_bound_check: k must be positive");
    Rng local(20240517);
    Rng& gen = rng != nullptr ? *rng : local;
    std::vector<Vec> xs;
    xs.reserve(probes);
    for (int i = 0; i < probes; ++i) xs.push_back(gen.unit_vector(dim));
    RiccatiReport rep;
    rep.max_violation = -std::numeric_limits<double>::infinity();
    riccati_check_interval(R, dim, k, a, b, grid, xs, rep, 0);
    rep.pass = rep.max_violation <= tolerance;
    return rep;
}

// ---------------------------------------------------------------------------
// Expansion rate / Ehrenfest time

LambdaEstimate estimate_lambda_max(const Manifold& m, int sample_count, double T, Rng& rng) {
    if (sample_count < 32) throw DomainError("estimate_lambda_max: need at least 32 samples");
    LambdaEstimate est;
    est.lo = std::numeric_limits<double>::infinity();
    est.hi = -est.lo;
    FlowOptions opts;
    opts.dt = 2e-3;
    for (int i = 0; i < sample_count; ++i) {
        const Vec x = m.random_base(rng);
        Vec dir = rng.unit_vector(m.coord_dim());
        dir = m.project_tangent(x, dir);
        if (m.norm(x, dir) < 1e-6) {
            --i;
            continue;
        }
        const PhasePoint rho = make_phase_point(m, x, dir);
        FlowSegment seg = propagate_linearization(m, rho, T, opts);
        const double t_used = std::abs(seg.t_reached);
        if (t_used < 0.5 * T) continue;  // left the patch too early
        const double nrm = operator_norm_dflow(seg, seg.t_reached);
        const double lam = std::log(std::max(nrm, 1.0 + 1e-12)) / t_used;
        est.lo = std::min(est.lo, lam);
        est.hi = std::max(est.hi, lam);
        est.lambda = std::max(est.lambda, lam);
        ++est.used;
    }
    if (est.used == 0) throw NumericError("estimate_lambda_max: no usable samples");
    return est;
}

double ehrenfest_time(double h, double lambda, double lambda_floor) {
    if (h <= 0.0 || h >= 1.0) throw DomainError("ehrenfest_time: need 0 < h < 1");
    const double lam = std::max(lambda, lambda_floor);
    return std::log(1.0 / h) / (2.0 * lam);
}

// ---------------------------------------------------------------------------
// Stable / unstable splitting

namespace {

// smallest principal angle between column spans
double min_principal_angle(const Mat& U, const Mat& V) {
    const Mat Qu = Eigen::HouseholderQR<Mat>(U).householderQ() * Mat::Identity(U.rows(), U.cols());
    const Mat Qv = Eigen::HouseholderQR<Mat>(V).householderQ() * Mat::Identity(V.rows(), V.cols());
    Eigen::JacobiSVD<Mat> svd(Qu.transpose() * Qv);
    const double c = std::clamp(svd.singularValues()[0], -1.0, 1.0);
    return std::acos(c);
}

double max_principal_angle(const Mat& U, const Mat& V) {
    const Mat Qu = Eigen::HouseholderQR<Mat>(U).householderQ() * Mat::Identity(U.rows(), U.cols());
    const Mat Qv = Eigen::HouseholderQR<Mat>(V).householderQ() * Mat::Identity(V.rows(), V.cols());
    Eigen::JacobiSVD<Mat> svd(Qu.transpose() * Qv);
    const double c = std::clamp(svd.singularValues().tail(1)[0], -1.0, 1.0);
    return std::acos(c);
}

Mat orthonormalize(const Mat& M) {
    return Eigen::HouseholderQR<Mat>(M).householderQ() * Mat::Identity(M.rows(), M.cols());
}

}  // namespace

SplittingEstimate stable_unstable(const Manifold& m, const PhasePoint& rho, double T,
                                  const FlowOptions& opts) {
    SplittingEstimate out;
    out.rho = rho;
    const int p = m.dim() - 1;
    Rng gen(987654321);
    Mat G(2 * p, p);
    for (int j = 0; j < p; ++j) G.col(j) = gen.unit_vector(2 * p);

    FlowOptions o = opts;
    const FlowSegment segF = propagate_linearization(m, rho, T, o);
    const FlowSegment segB = propagate_linearization(m, rho, -T, o);
    if (!segF.complete() || !segB.complete())
        throw DomainError("stable_unstable: orbit left the domain before time T");
    const Mat MF = segF.dflow_perp(segF.states.back());  // d(phi_T) at rho
    const Mat MB = segB.dflow_perp(segB.states.back());  // d(phi_-T) at rho

    // E+ = backward image from phi_T(rho); E- = forward image from phi_-T(rho).
    out.Eplus = orthonormalize(MF.partialPivLu().solve(G));
    out.Eminus = orthonormalize(MB.partialPivLu().solve(G));
    out.min_angle = min_principal_angle(out.Eplus, out.Eminus);

    // Horizon robustness: a genuine splitting is already converged at T/2;
    // polynomial (non-hyperbolic) models produce T-dependent directions.
    const Mat MFh = segF.dflow_perp(segF.state_at_time(T / 2));
    const Mat MBh = segB.dflow_perp(segB.state_at_time(-T / 2));
    const double horizon_defect = std::max(
        std::sin(max_principal_angle(out.Eplus, orthonormalize(MFh.partialPivLu().solve(G)))),
        std::sin(max_principal_angle(out.Eminus, orthonormalize(MBh.partialPivLu().solve(G)))));

    // contraction rate along E+
    const int ngrid = 20;
    double sum_t = 0, sum_l = 0, sum_tt = 0, sum_tl = 0;
    std::vector<double> ts, ds;
    for (int i = 1; i <= ngrid; ++i) {
        const double t = T * i / ngrid;
        const auto s = segF.state_at_time(t);
        const Mat Mt = segF.dflow_perp(s);
        const double d = (Mt * out.Eplus).norm() / out.Eplus.norm();
        ts.push_back(t);
        ds.push_back(std::log(std::max(d, 1e-300)));
        sum_t += t;
        sum_l += ds.back();
        sum_tt += t * t;
        sum_tl += t * ds.back();
    }
    const double mu = -(ngrid * sum_tl - sum_t * sum_l) / (ngrid * sum_tt - sum_t * sum_t);
    double bmax = 0;
    for (int i = 0; i < ngrid; ++i) bmax = std::max(bmax, std::exp(ds[i] + mu * ts[i]));
    out.Bhat = (mu > 1e-6) ? std::max(1.0 / mu, bmax) : std::numeric_limits<double>::infinity();

    // invariance residual against the splitting computed at phi_1(rho),
    // expressed in the transported frame so coordinates agree.
    const auto s1 = segF.state_at_time(1.0);
    const Mat M1 = segF.dflow_perp(s1);
    FlowOptions o1 = opts;
    o1.initial_frame = s1.frame;
    const PhasePoint rho1{s1.x, m.tangent_to_cotangent(s1.x, s1.v)};
    double residual = 1.0;
    try {
        const FlowSegment segF1 = propagate_linearization(m, rho1, T, o1);
        const FlowSegment segB1 = propagate_linearization(m, rho1, -T, o1);
        if (segF1.complete() && segB1.complete()) {
            const Mat Ep1 = orthonormalize(
                segF1.dflow_perp(segF1.states.back()).partialPivLu().solve(G));
            const Mat Em1 = orthonormalize(
                segB1.dflow_perp(segB1.states.back()).partialPivLu().solve(G));
            const double rp = std::sin(max_principal_angle(orthonormalize(M1 * out.Eplus), Ep1));
            const double rm = std::sin(max_principal_angle(orthonormalize(M1 * out.Eminus), Em1));
            residual = std::max(rp, rm);
        }
    } catch (const GeobeamError&) {
        // keep residual = 1 (unusable)
    }
    out.residual = residual;
    out.horizon_defect = horizon_defect;
    out.usable =
        residual <= 0.1 && horizon_defect <= 0.05 && out.min_angle > 1e-2 && mu > 0.05;
    return out;
}

// ---------------------------------------------------------------------------
// Discrete hyperbolic backend

namespace {

inline std::uint64_t mulmod(std::uint64_t a, std::uint64_t b, std::uint64_t q) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(a) * b) % q);
}

inline std::uint64_t addmod(std::uint64_t a, std::uint64_t b, std::uint64_t q) {
    const std::uint64_t s = a + b;
    return s >= q ? s - q : s;
}

std::array<std::array<std::uint64_t, 2>, 2> matmulmod(
    const std::array<std::array<std::uint64_t, 2>, 2>& A,
    const std::array<std::array<std::uint64_t, 2>, 2>& B, std::uint64_t q) {
    std::array<std::array<std::uint64_t, 2>, 2> C{};
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            C[i][j] = addmod(mulmod(A[i][0], B[0][j], q), mulmod(A[i][1], B[1][j], q), q);
    return C;
}

std::uint64_t reduce_long(long v, std::uint64_t q) {
    long r = v % static_cast<long>(q);
    if (r < 0) r += static_cast<long>(q);
    return static_cast<std::uint64_t>(r);
}

}  // namespace

DiscreteHyperbolicSystem::DiscreteHyperbolicSystem(std::array<std::array<long, 2>, 2> mat)
    : m_(mat) {
    const long a = m_[0][0], b = m_[0][1], c = m_[1][0], d = m_[1][1];
    const long det = a * d - b * c;
    if (det != 1 && det != -1)
        throw ConfigError("DiscreteHyperbolicSystem: |det| must be 1");
    const double tr = static_cast<double>(a + d);
    const double disc = tr * tr - 4.0 * det;
    if (disc <= 0) throw ConfigError("DiscreteHyperbolicSystem: eigenvalues not real");
    const double sd = std::sqrt(disc);
    const double l1 = 0.5 * (tr + sd), l2 = 0.5 * (tr - sd);
    if (std::abs(std::abs(l1) - 1.0) < 1e-9 || std::abs(std::abs(l2) - 1.0) < 1e-9)
        throw ConfigError("DiscreteHyperbolicSystem: eigenvalue on the unit circle");
    const double lp = std::abs(l1) >= std::abs(l2) ? l1 : l2;
    const double lm = std::abs(l1) >= std::abs(l2) ? l2 : l1;
    lambda_plus_ = std::abs(lp);
    lambda_minus_ = std::abs(lm);
    lp_signed_ = lp;
    lm_signed_ = lm;
    auto evec = [&](double lam) {
        Eigen::Vector2d v;
        if (std::abs(b) > 1e-12) {
            v << b, lam - a;
        } else if (std::abs(c) > 1e-12) {
            v << lam - d, c;
        } else {
            v << 1, 0;
            if (std::abs(static_cast<double>(d) - lam) < std::abs(static_cast<double>(a) - lam))
                v << 0, 1;
        }
        return Eigen::Vector2d(v.normalized());
    };
    eplus_ = evec(lp);
    eminus_ = evec(lm);

    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) mq_[i][j] = reduce_long(m_[i][j], Q);
    // integer inverse: adj(M)/det with det = +-1
    const long sgn = det;
    mq_inv_[0][0] = reduce_long(sgn * d, Q);
    mq_inv_[0][1] = reduce_long(-sgn * b, Q);
    mq_inv_[1][0] = reduce_long(-sgn * c, Q);
    mq_inv_[1][1] = reduce_long(sgn * a, Q);
}

DiscreteHyperbolicSystem::LatticeState DiscreteHyperbolicSystem::to_lattice(double x,
                                                                            double y) const {
    auto wrap = [](double v) {
        v -= std::floor(v);
        return v;
    };
    const auto ax = static_cast<std::uint64_t>(std::llround(wrap(x) * static_cast<double>(Q))) % Q;
    const auto ay = static_cast<std::uint64_t>(std::llround(wrap(y) * static_cast<double>(Q))) % Q;
    return {ax, ay};
}

Eigen::Vector2d DiscreteHyperbolicSystem::to_unit(const LatticeState& s) const {
    return {static_cast<double>(s.a) / static_cast<double>(Q),
            static_cast<double>(s.b) / static_cast<double>(Q)};
}

DiscreteHyperbolicSystem::LatticeState DiscreteHyperbolicSystem::step(const LatticeState& s) const {
    return {addmod(mulmod(mq_[0][0], s.a, Q), mulmod(mq_[0][1], s.b, Q), Q),
            addmod(mulmod(mq_[1][0], s.a, Q), mulmod(mq_[1][1], s.b, Q), Q)};
}

DiscreteHyperbolicSystem::LatticeState DiscreteHyperbolicSystem::step_back(
    const LatticeState& s) const {
    return {addmod(mulmod(mq_inv_[0][0], s.a, Q), mulmod(mq_inv_[0][1], s.b, Q), Q),
            addmod(mulmod(mq_inv_[1][0], s.a, Q), mulmod(mq_inv_[1][1], s.b, Q), Q)};
}

DiscreteHyperbolicSystem::LatticeState DiscreteHyperbolicSystem::power(const LatticeState& s,
                                                                       std::int64_t k) const {
    auto base = k >= 0 ? mq_ : mq_inv_;
    std::uint64_t e = static_cast<std::uint64_t>(k >= 0 ? k : -k);
    std::array<std::array<std::uint64_t, 2>, 2> acc{{{1, 0}, {0, 1}}};
    while (e > 0) {
        if (e & 1ull) acc = matmulmod(acc, base, Q);
        base = matmulmod(base, base, Q);
        e >>= 1;
    }
    return {addmod(mulmod(acc[0][0], s.a, Q), mulmod(acc[0][1], s.b, Q), Q),
            addmod(mulmod(acc[1][0], s.a, Q), mulmod(acc[1][1], s.b, Q), Q)};
}

double DiscreteHyperbolicSystem::torus_distance(const Eigen::Vector2d& p,
                                                const Eigen::Vector2d& q) {
    double dx = std::abs(p.x() - q.x());
    double dy = std::abs(p.y() - q.y());
    dx = std::min(dx, 1.0 - dx);
    dy = std::min(dy, 1.0 - dy);
    return std::sqrt(dx * dx + dy * dy);
}

Vec discrete_step(const DiscreteHyperbolicSystem& sys, const Vec& point, std::int64_t k) {
    const auto s = sys.to_lattice(point[0], point[1]);
    const auto r = sys.power(s, k);
    const auto u = sys.to_unit(r);
    Vec out(2);
    out << u.x(), u.y();
    return out;
}

}  // namespace geobeam
