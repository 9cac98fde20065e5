#pragma once

#include "geobeam/common.hpp"
#include "geobeam/conormal.hpp"
#include "geobeam/manifold.hpp"

#include <complex>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace geobeam {

using Complex = std::complex<double>;

// Explicit eigenfunction: -Delta phi = lambda^2 phi, ||phi||_{L^2} = 1.
struct Eigenfunction {
    std::shared_ptr<const Manifold> model;
    double lambda = 0;
    std::function<Complex(const Vec&)> eval;
    double normalization_defect = 0;  // certificate: | ||phi||_2 - 1 |
    int ell = -1;                     // sphere degree (if applicable)
    Eigen::VectorXi mvec;             // torus frequency (if applicable)
};

// Normalized exponential exp(i <m, x>) / (2 pi)^{n/2}; lambda = |m| in the
// unit-period (2 pi) convention.
Eigenfunction torus_eigenfunction(std::shared_ptr<const FlatTorus> torus,
                                  const Eigen::VectorXi& m);

// L^2-normalized zonal harmonic of degree ell; lambda = sqrt(ell (ell + 1)).
Eigenfunction sphere_zonal(std::shared_ptr<const RoundSphere> sphere, int ell);

// |(-Delta - lambda^2) phi| / max(lambda^2, 1) at x by central differences.
double laplacian_residual(const Eigenfunction& phi, const Vec& x, double h = 1e-5);

double zonal_sup_norm(const Eigenfunction& phi, int scan_points = 20001);

struct AverageRecord {
    std::string H_desc;
    std::string weight_desc;
    double lambda = 0;
    double value = 0;       // |int_H w phi dsigma|
    double quad_error = 0;
    int refinement_levels = 0;
};

AverageRecord average_over(const Submanifold& H, const std::function<double(double)>& w,
                           const Eigenfunction& phi, const std::string& weight_desc = "1");

struct GrowthFit {
    double exponent = 0;
    double prefactor = 0;
    double residual = 0;           // of the selected model
    double residual_power = 0;
    double residual_sqrtlog = 0;
    std::string preferred;         // "power" or "power_over_sqrtlog"
};

// Least squares on log-transformed (lambda, value) data for the two growth
// models; needs >= 8 records spanning a lambda-decade.
GrowthFit growth_fit(const std::vector<std::pair<double, double>>& records,
                     const std::string& model = "auto");

// Semiclassical Sobolev norm ||u||_{H_h^s} of an L^2-normalized exact
// eigenfunction; a Fourier multiplier on these models: (1 + h^2 lambda^2)^{s/2}.
double semiclassical_sobolev_norm(const Eigenfunction& phi, double s, double h);

}  // namespace geobeam
