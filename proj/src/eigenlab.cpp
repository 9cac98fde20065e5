#include "geobeam/eigenlab.hpp"

#include "geobeam/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace geobeam {
namespace {

// 16-point Gauss-Legendre nodes/weights on [-1, 1]
constexpr double kGlNode[8] = {0.0950125098376374, 0.2816035507792589, 0.4580167776572274,
                               0.6178762444026438, 0.7554044083550030, 0.8656312023878318,
                               0.9445750230732326, 0.9894009349916499};
constexpr double kGlWeight[8] = {0.1894506104550685, 0.1826034150449236, 0.1691565193950025,
                                 0.1495959888165767, 0.1246289712555339, 0.0951585116824928,
                                 0.0622535239386479, 0.0271524594117541};

Complex gl16(const std::function<Complex(double)>& f, double a, double b) {
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    Complex acc = 0;
    for (int i = 0; i < 8; ++i) {
        acc += kGlWeight[i] * (f(mid + half * kGlNode[i]) + f(mid - half * kGlNode[i]));
    }
    return acc * half;
}

Complex composite_gl(const std::function<Complex(double)>& f, double a, double b, int segments) {
    Complex acc = 0;
    for (int s = 0; s < segments; ++s) {
        const double lo = a + (b - a) * s / segments;
        const double hi = a + (b - a) * (s + 1) / segments;
        acc += gl16(f, lo, hi);
    }
    return acc;
}

}  // namespace

Eigenfunction torus_eigenfunction(std::shared_ptr<const FlatTorus> torus,
                                  const Eigen::VectorXi& m) {
    if (m.size() != torus->dim()) throw ConfigError("torus_eigenfunction: frequency size");
    for (int i = 0; i < torus->periods().size(); ++i)
        if (std::abs(torus->periods()[i] - 2.0 * M_PI) > 1e-12)
            throw ConfigError("torus_eigenfunction: unit-period (2 pi) convention required");
    Eigenfunction phi;
    phi.model = torus;
    phi.mvec = m;
    phi.lambda = std::sqrt(static_cast<double>(m.squaredNorm()));
    const int n = torus->dim();
    const double norm = std::pow(2.0 * M_PI, -0.5 * n);
    Eigen::VectorXd md = m.cast<double>();
    phi.eval = [md, norm](const Vec& x) {
        return norm * std::exp(Complex(0.0, md.dot(x)));
    };
    phi.normalization_defect = 0.0;  // exact
    return phi;
}

Eigenfunction sphere_zonal(std::shared_ptr<const RoundSphere> sphere, int ell) {
    if (ell < 0) throw DomainError("sphere_zonal: ell >= 0");
    if (ell > 2000) throw NumericError("sphere_zonal: degree beyond recurrence precision");
    if (sphere->dim() != 2) throw ConfigError("sphere_zonal: S^2 only");
    Eigenfunction phi;
    phi.model = sphere;
    phi.ell = ell;
    phi.lambda = std::sqrt(static_cast<double>(ell) * (ell + 1.0));
    const double N = std::sqrt((2.0 * ell + 1.0) / (4.0 * M_PI));
    phi.eval = [ell, N](const Vec& x) {
        double ct = std::clamp(x[2] / x.norm(), -1.0, 1.0);
        double p;
        kernels::legendre_p(ell, &ct, 1, &p);
        return Complex(N * p, 0.0);
    };
    // exact normalization: int_{S^2} N^2 P_l(cos)^2 = N^2 (4 pi / (2l+1)) = 1
    phi.normalization_defect = 0.0;
    return phi;
}

double laplacian_residual(const Eigenfunction& phi, const Vec& x, double h) {
    const Manifold& m = *phi.model;
    Complex lap = 0;
    if (dynamic_cast<const FlatTorus*>(&m) != nullptr) {
        for (int i = 0; i < m.coord_dim(); ++i) {
            Vec xp = x, xm = x;
            xp[i] += h;
            xm[i] -= h;
            lap += (phi.eval(xp) - 2.0 * phi.eval(x) + phi.eval(xm)) / (h * h);
        }
    } else if (dynamic_cast<const RoundSphere*>(&m) != nullptr) {
        // Laplace-Beltrami at x: sum of second derivatives along orthonormal
        // geodesic directions, exp_x(t e) = cos(t) x + sin(t) e
        Mat B(m.coord_dim(), m.dim());
        int col = 0;
        for (int i = 0; i < m.coord_dim() && col < m.dim(); ++i) {
            Vec e = Vec::Zero(m.coord_dim());
            e[i] = 1.0;
            e = m.project_tangent(x, e);
            for (int j = 0; j < col; ++j) e -= e.dot(B.col(j)) * B.col(j);
            if (e.norm() < 1e-8) continue;
            B.col(col++) = e / e.norm();
        }
        for (int i = 0; i < m.dim(); ++i) {
            const Vec xp = std::cos(h) * x + std::sin(h) * B.col(i);
            const Vec xm = std::cos(h) * x - std::sin(h) * B.col(i);
            lap += (phi.eval(xp) - 2.0 * phi.eval(x) + phi.eval(xm)) / (h * h);
        }
    } else {
        throw GeobeamError("laplacian_residual: unsupported model");
    }
    const double lam2 = phi.lambda * phi.lambda;
    return std::abs(lap + lam2 * phi.eval(x)) / std::max(lam2, 1.0);
}

double zonal_sup_norm(const Eigenfunction& phi, int scan_points) {
    if (phi.ell < 0) throw DomainError("zonal_sup_norm: not a zonal harmonic");
    std::vector<double> ct(scan_points), pl(scan_points);
    for (int i = 0; i < scan_points; ++i)
        ct[i] = std::cos(M_PI * i / (scan_points - 1.0));
    kernels::legendre_p(phi.ell, ct.data(), scan_points, pl.data());
    const double N = std::sqrt((2.0 * phi.ell + 1.0) / (4.0 * M_PI));
    double best = 0;
    for (int i = 0; i < scan_points; ++i) best = std::max(best, std::abs(N * pl[i]));
    return best;
}

AverageRecord average_over(const Submanifold& H, const std::function<double(double)>& w,
                           const Eigenfunction& phi, const std::string& weight_desc) {
    AverageRecord rec;
    rec.H_desc = H.kind();
    rec.weight_desc = weight_desc;
    rec.lambda = phi.lambda;
    if (H.is_point()) {
        rec.value = std::abs(phi.eval(H.eval(0)));
        rec.quad_error = 0.0;
        return rec;
    }
    auto integrand = [&](double u) -> Complex { return w(u) * phi.eval(H.eval(u)); };
    const double a = H.param_lo(), b = H.param_hi();
    int segments = 4;
    Complex prev = composite_gl(integrand, a, b, segments);
    for (int level = 0; level < 14; ++level) {
        segments *= 2;
        const Complex cur = composite_gl(integrand, a, b, segments);
        const double err = std::abs(cur - prev);
        rec.refinement_levels = level + 1;
        if (err <= std::max(1e-8, 1e-4 * std::abs(cur))) {
            rec.value = std::abs(cur);
            rec.quad_error = err;
            return rec;
        }
        prev = cur;
    }
    throw NumericError("average_over: quadrature did not converge");
}

double semiclassical_sobolev_norm(const Eigenfunction& phi, double s, double h) {
    if (h <= 0) throw DomainError("semiclassical_sobolev_norm: h > 0 required");
    const double lam2 = phi.lambda * phi.lambda;
    return std::pow(1.0 + h * h * lam2, 0.5 * s) * (1.0 + phi.normalization_defect);
}

GrowthFit growth_fit(const std::vector<std::pair<double, double>>& records,
                     const std::string& model) {
    if (records.size() < 8) throw DomainError("growth_fit: need at least 8 records");
    double lmin = std::numeric_limits<double>::infinity(), lmax = 0;
    for (const auto& [lam, val] : records) {
        lmin = std::min(lmin, lam);
        lmax = std::max(lmax, lam);
        if (lam <= std::exp(1.0)) throw DomainError("growth_fit: lambda must exceed e");
        if (val <= 0) throw DomainError("growth_fit: values must be positive");
    }
    if (lmax / lmin < 10.0) throw DomainError("growth_fit: degenerate lambda spread");

    auto lsq = [&](bool sqrtlog) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        const double n = static_cast<double>(records.size());
        for (const auto& [lam, val] : records) {
            const double x = std::log(lam);
            double y = std::log(val);
            if (sqrtlog) y += 0.5 * std::log(std::log(lam));
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        const double inter = (sy - slope * sx) / n;
        double rss = 0;
        for (const auto& [lam, val] : records) {
            const double x = std::log(lam);
            double y = std::log(val);
            if (sqrtlog) y += 0.5 * std::log(std::log(lam));
            rss += sq(y - (slope * x + inter));
        }
        return std::tuple<double, double, double>(slope, std::exp(inter),
                                                  std::sqrt(rss / n));
    };
    const auto [a1, p1, r1] = lsq(false);
    const auto [a2, p2, r2] = lsq(true);
    GrowthFit fit;
    fit.residual_power = r1;
    fit.residual_sqrtlog = r2;
    const bool pick_sqrtlog = (model == "power_over_sqrtlog") ||
                              (model == "auto" && r2 < r1);
    if (model != "auto" && model != "power" && model != "power_over_sqrtlog")
        throw ConfigError("growth_fit: unknown model " + model);
    if (pick_sqrtlog) {
        fit.exponent = a2;
        fit.prefactor = p2;
        fit.residual = r2;
    } else {
        fit.exponent = a1;
        fit.prefactor = p1;
        fit.residual = r1;
    }
    fit.preferred = (r2 < r1) ? "power_over_sqrtlog" : "power";
    return fit;
}

}  // namespace geobeam
