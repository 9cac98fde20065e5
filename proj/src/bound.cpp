#include "geobeam/bound.hpp"

#include "geobeam/conormal.hpp"

#include <algorithm>
#include <cmath>

namespace geobeam {

ConstantsLedger ConstantsLedger::defaults() {
    ConstantsLedger led;
    led.set("Cnk", 1.0, Provenance::existential);      // carried explicitly
    led.set("Lambda_hat", 0.05, Provenance::empirical_fit);  // refreshed per model
    led.set("Lambda_floor", 0.05, Provenance::config);
    led.set("a_rate", 1.0, Provenance::config);       // r_t = (1/a) e^{-a t}
    led.set("B_hat", 1.0, Provenance::empirical_fit);
    led.set("C_panda_hat", 1.0, Provenance::empirical_fit);
    led.set("c_ladder_hat", 1.0, Provenance::empirical_fit);
    led.set("c3_hat", 0.5, Provenance::empirical_fit);
    led.set("c4_hat", 1.0, Provenance::empirical_fit);
    led.set("C0_hat", 1.0, Provenance::empirical_fit);
    led.set("C_tilde", 2.0, Provenance::empirical_fit);  // tangentSpace rate constant
    led.set("D_max", 16.0, Provenance::config);
    led.set("tau0", 0.5, Provenance::config);
    led.set("R0", 1.0, Provenance::config);
    return led;
}

double Schedule::T0_of(double h) const {
    const double L = std::log(1.0 / h);
    return kind == ScheduleKind::noConj ? b * L : (eps / c_tilde) * L;
}

Schedule make_schedule(ScheduleKind kind, double eps, std::vector<double> h_grid,
                       const ConstantsLedger& ledger, double R0) {
    if (h_grid.empty()) throw ConfigError("make_schedule: empty h grid");
    std::sort(h_grid.begin(), h_grid.end());
    Schedule s;
    s.kind = kind;
    s.eps = eps;
    s.h_grid = h_grid;
    const double lam = std::max(ledger.get("Lambda_hat"), ledger.get("Lambda_floor"));
    s.lambda = lam;
    const double a = ledger.get("a_rate");
    if (kind == ScheduleKind::noConj) {
        if (!(eps > 0 && eps < 0.25))
            throw ConfigError("make_schedule(noConj): need 0 < eps < 1/4");
        s.delta = 2.0 * eps;
        s.alpha = 0.9 * (1.0 - 2.0 * eps);
        // b below eps / (12 (2 Lambda + a)), also small enough that
        // T0 <= 2 alpha T_e on the grid: b log(1/h) <= alpha log(1/h)/Lambda
        s.b = std::min(eps / (12.0 * (2.0 * lam + a)), s.alpha / lam);
        s.t0 = 1.0;
    } else {
        if (!(eps > 0 && eps < 0.5))
            throw ConfigError("make_schedule(tangentSpace): need 0 < eps < 1/2");
        const double arate = 0.9 * (1.0 - 2.0 * eps) / eps;
        s.c_tilde = std::max(ledger.get("C_tilde"), lam / arate);
        s.alpha = arate * eps;
        // delta must clear both eps (1 + Lambda/c_tilde) and, where the grid
        // allows, the constant in 8 h^delta <= h^eps at the largest h
        const double h_max = s.h_grid.back();
        const double need_gap = std::log(8.0) / std::log(1.0 / h_max);
        double delta = std::max(1.05 * eps * (1.0 + lam / s.c_tilde),
                                eps + 1.02 * need_gap);
        s.delta = std::min(0.49, std::max(delta, eps + 1e-3));
        s.t0 = 1.0;
    }
    // verify the invariant inequalities per grid point; only an empty
    // feasible set is an error
    s.feasible.assign(s.h_grid.size(), false);
    bool any = false;
    for (std::size_t i = 0; i < s.h_grid.size(); ++i) {
        const double h = s.h_grid[i];
        const double R = s.R_of(h);
        const bool ok = (8.0 * std::pow(h, s.delta) <= R) && (R <= R0) &&
                        (s.T0_of(h) <= 2.0 * s.alpha * ehrenfest_time(h, lam)) &&
                        (s.T0_of(h) > 0);
        s.feasible[i] = ok;
        any = any || ok;
    }
    if (!any) throw ConfigError("make_schedule: empty feasible grid");
    return s;
}

LadderCounts counts_from_partition(const CoverPartition& part) {
    LadderCounts c;
    c.B = static_cast<double>(part.bad.size());
    for (const auto& rung : part.rungs) {
        c.G.push_back(static_cast<double>(rung.tubes.size()));
        c.t.push_back(rung.t);
        c.T.push_back(rung.T);
    }
    return c;
}

BoundEstimate evaluate_bound(const LadderCounts& counts, double h, const BoundInputs& in,
                             const ConstantsLedger& ledger,
                             const std::optional<Schedule>& schedule) {
    if (h <= 0 || h >= 1) throw DomainError("evaluate_bound: need 0 < h < 1");
    BoundEstimate est;
    est.h = h;
    if (schedule.has_value()) {
        const double Te = ehrenfest_time(h, schedule->lambda);
        for (std::size_t l = 0; l < counts.T.size(); ++l)
            if (counts.T[l] > 2.0 * schedule->alpha * Te + 1e-12)
                throw DomainError("evaluate_bound: rung " + std::to_string(l) +
                                  " violates T_l <= 2 alpha T_e(h)");
    }
    est.bad_term = std::sqrt(std::max(0.0, counts.B));
    double good = 0;
    for (std::size_t l = 0; l < counts.G.size(); ++l) {
        if (counts.G[l] <= 0) continue;
        if (counts.T[l] <= 0) throw DomainError("evaluate_bound: empty window in rung");
        good += std::sqrt(counts.G[l] * counts.t[l] / counts.T[l]);
    }
    est.good_term = good;
    const double Cnk = ledger.get("Cnk");
    est.prefactor = Cnk * in.D * in.w_sup * std::pow(in.R, 0.5 * (in.n - 1)) /
                    std::sqrt(in.tau);
    est.bound = est.prefactor * (est.bad_term + est.good_term);
    const double lambda_freq = 1.0 / h;
    est.classical = baseline(lambda_freq, in.k, "classical");
    est.log_improved = baseline(lambda_freq, in.k, "logImproved");
    est.quasimode_term = 0.0;
    est.hN_term = 0.0;
    est.quasimode_formula =
        "prefactor * sum_l (|G_l| t_l T_l)^{1/2} / h * ||(-h^2 Delta - 1)u|| (= 0: exact eigenfunctions)";
    return est;
}

double baseline(double lambda, int k, const std::string& kind) {
    if (lambda <= std::exp(1.0)) throw DomainError("baseline: need lambda > e");
    const double main = std::pow(lambda, 0.5 * (k - 1));
    if (kind == "classical") return main;
    if (kind == "logImproved") return main / std::sqrt(std::log(lambda));
    throw ConfigError("baseline: unknown kind " + kind);
}

IftResult quantitative_ift(
    const std::function<Vec(const Vec&, const Vec&, const Vec&)>& f, const IftBounds& bounds,
    int verification_samples, Rng* rng) {
    IftResult out;
    const int m0 = bounds.m[0], m1 = bounds.m[1], m2 = bounds.m[2];
    const Vec z0 = Vec::Zero(m0), z1 = Vec::Zero(m1), z2 = Vec::Zero(m2);
    if (f(z0, z1, z2).norm() > 1e-12)
        throw DomainError("quantitative_ift: f(0,0,0) must vanish");

    // L = (D_{x0} f(0,0,0))^{-1} by central differences
    Mat D0(m0, m0);
    const double hfd = 1e-6;
    for (int i = 0; i < m0; ++i) {
        Vec ep = z0, em = z0;
        ep[i] += hfd;
        em[i] -= hfd;
        D0.col(i) = (f(ep, z1, z2) - f(em, z1, z2)) / (2 * hfd);
    }
    const Mat L = D0.inverse();
    if (!L.allFinite()) throw NumericError("quantitative_ift: D_{x0} f(0) not invertible");
    Eigen::JacobiSVD<Mat> svdL(L);
    const double Lnorm = svdL.singularValues()[0];
    out.L_norm = Lnorm;

    auto S_of = [&](const std::array<double, 3>& r) {
        double acc = 0;
        for (int i = 0; i < 3; ++i) acc += bounds.m[i] * bounds.B[i] * r[i];
        return Lnorm * acc;
    };
    auto second_ok = [&](const std::array<double, 3>& r, double S) {
        const double lhs = S * r[0] + Lnorm * (bounds.m[1] * bounds.Btilde[1] * r[1] +
                                               bounds.m[2] * bounds.Btilde[2] * r[2]);
        return lhs <= r[0] + 1e-15;
    };
    // 20-point-per-decade log lattice over [1e-4, r_max]; the feasible set is
    // monotone, so a grid search is robust
    std::vector<double> lattice;
    for (int e = -80; ; ++e) {
        const double v = std::pow(10.0, e / 20.0);
        if (v > bounds.r_max * (1 + 1e-12)) break;
        lattice.push_back(v);
    }
    double best_obj = -1;
    for (double r1 : lattice)
        for (double r2 : lattice) {
            for (auto it = lattice.rbegin(); it != lattice.rend(); ++it) {
                const std::array<double, 3> r{*it, r1, r2};
                const double S = S_of(r);
                if (S < 1.0 && second_ok(r, S)) {
                    if (r1 * r2 > best_obj) {
                        best_obj = r1 * r2;
                        out.radii = r;
                        out.S = S;
                        out.feasible = true;
                    }
                    break;
                }
            }
        }
    if (!out.feasible) return out;

    // empirical verification: G(x0) = x0 - L f(x0, x1, x2) contracts on the
    // certified balls with observed ratio <= S
    Rng local(424242);
    Rng& gen = rng != nullptr ? *rng : local;
    double worst_ratio = 0;
    for (int s = 0; s < verification_samples; ++s) {
        const Vec x1 = m1 > 0 ? Vec(gen.unit_vector(m1) * (out.radii[1] * gen.uniform()))
                              : Vec(Vec::Zero(0));
        const Vec x2 = m2 > 0 ? Vec(gen.unit_vector(m2) * (out.radii[2] * gen.uniform()))
                              : Vec(Vec::Zero(0));
        Vec x0 = z0;
        bool converged = false;
        double prev_step = -1;
        for (int it = 0; it < 500; ++it) {
            const Vec x0n = x0 - L * f(x0, x1, x2);
            const double d = (x0n - x0).norm();
            if (prev_step > 1e-14 && d > 1e-15)
                worst_ratio = std::max(worst_ratio, d / prev_step);
            prev_step = d;
            x0 = x0n;
            if (d < 1e-13) {
                converged = true;
                break;
            }
        }
        if (!converged) ++out.convergence_failures;
    }
    out.observed_ratio = worst_ratio;
    return out;
}

double estimate_i_H(const Submanifold& H, double dt) {
    const Manifold& m = H.model();
    const auto net = sample_snh(H, 0.2);
    double inf_rate = std::numeric_limits<double>::infinity();
    for (const auto& cp : net) {
        const auto moved = flow(m, cp.rho, dt);
        double d;
        if (H.is_point()) {
            d = m.base_distance(moved.x, H.eval(0));
        } else {
            d = std::abs(H.base_offset(moved.x));
        }
        inf_rate = std::min(inf_rate, d / dt);
    }
    return inf_rate;
}

}  // namespace geobeam
