#pragma once

#include "geobeam/common.hpp"

#include <memory>
#include <string>
#include <vector>

namespace geobeam {

enum class CurvatureKind { flat, constant_positive, constant_negative, variable };

// Analytic model manifold. Chart models (torus, half-plane, warped surface)
// work in intrinsic coordinates; the round sphere works in embedding
// coordinates with projection. `dim` is the intrinsic dimension n, `coord_dim`
// the number of coordinates a point carries.
class Manifold {
  public:
    virtual ~Manifold() = default;

    const std::string& name() const { return name_; }
    int dim() const { return n_; }
    int coord_dim() const { return coord_dim_; }
    virtual CurvatureKind curvature_kind() const = 0;

    virtual bool in_domain(const Vec& x) const = 0;
    virtual Mat metric(const Vec& x) const = 0;

    // Geodesic equation in (x, v) tangent form: x'' = geodesic_accel(x, x').
    virtual Vec geodesic_accel(const Vec& x, const Vec& v) const = 0;
    // Parallel-transport right-hand side along a curve with velocity v:
    // w' = transport_rhs(x, v, w).
    virtual Vec transport_rhs(const Vec& x, const Vec& v, const Vec& w) const = 0;

    // Wrap / project a state back onto the model (torus wrap, sphere
    // projection). `v` may be null.
    virtual void normalize_state(Vec& x, Vec* v) const;

    // Curvature matrix R(t) of the matrix Jacobi equation in a parallel
    // orthonormal frame: R_ij = <Rm(v, E_i) v, E_j>, an (n-1)x(n-1) symmetric
    // matrix. `frame` holds the perpendicular frame vectors as columns.
    virtual Mat curvature_matrix(const Vec& x, const Vec& v, const Mat& frame) const = 0;

    virtual double gauss_curvature(const Vec& x) const;  // surfaces only

    virtual double base_distance(const Vec& x, const Vec& y) const = 0;

    // Unit initial velocity at x of a minimizing geodesic toward y.
    virtual Vec connecting_direction(const Vec& x, const Vec& y) const = 0;

    // Chart-model Christoffel symbols Gamma[k](i,j); embedded models have none.
    virtual bool has_christoffel() const { return false; }
    virtual std::vector<Mat> christoffel(const Vec& x) const;

    // Metric pairings (models with closed-form metrics override these).
    virtual double inner(const Vec& x, const Vec& u, const Vec& w) const;
    double norm(const Vec& x, const Vec& u) const;
    virtual Vec cotangent_to_tangent(const Vec& x, const Vec& xi) const;
    virtual Vec tangent_to_cotangent(const Vec& x, const Vec& v) const;

    // Project an (embedded-model) vector onto the tangent space at x.
    virtual Vec project_tangent(const Vec& x, const Vec& u) const { (void)x; return u; }

    // Uniform-ish base point in the safe interior of the chart/domain.
    virtual Vec random_base(Rng& rng) const = 0;

  protected:
    Manifold(std::string name, int n, int coord_dim)
        : name_(std::move(name)), n_(n), coord_dim_(coord_dim) {}

  private:
    std::string name_;
    int n_;
    int coord_dim_;
};

class FlatTorus final : public Manifold {
  public:
    explicit FlatTorus(int n = 2, Vec periods = Vec());
    CurvatureKind curvature_kind() const override { return CurvatureKind::flat; }
    bool in_domain(const Vec& x) const override;
    Mat metric(const Vec& x) const override;
    Vec geodesic_accel(const Vec&, const Vec&) const override;
    Vec transport_rhs(const Vec&, const Vec&, const Vec&) const override;
    void normalize_state(Vec& x, Vec* v) const override;
    Mat curvature_matrix(const Vec&, const Vec&, const Mat&) const override;
    double gauss_curvature(const Vec&) const override { return 0.0; }
    double base_distance(const Vec& x, const Vec& y) const override;
    Vec connecting_direction(const Vec& x, const Vec& y) const override;
    bool has_christoffel() const override { return true; }
    std::vector<Mat> christoffel(const Vec& x) const override;
    Vec random_base(Rng& rng) const override;
    double inner(const Vec&, const Vec& u, const Vec& w) const override { return u.dot(w); }
    Vec cotangent_to_tangent(const Vec&, const Vec& xi) const override { return xi; }
    Vec tangent_to_cotangent(const Vec&, const Vec& v) const override { return v; }

    const Vec& periods() const { return periods_; }
    // Signed wrapped difference y - x, each component in (-p/2, p/2].
    Vec wrapped_diff(const Vec& x, const Vec& y) const;

  private:
    Vec periods_;
};

class RoundSphere final : public Manifold {
  public:
    explicit RoundSphere(int n = 2);
    CurvatureKind curvature_kind() const override { return CurvatureKind::constant_positive; }
    bool in_domain(const Vec& x) const override;
    Mat metric(const Vec& x) const override;
    Vec geodesic_accel(const Vec& x, const Vec& v) const override;
    Vec transport_rhs(const Vec& x, const Vec& v, const Vec& w) const override;
    void normalize_state(Vec& x, Vec* v) const override;
    Mat curvature_matrix(const Vec&, const Vec&, const Mat& frame) const override;
    double gauss_curvature(const Vec&) const override { return 1.0; }
    double base_distance(const Vec& x, const Vec& y) const override;
    Vec connecting_direction(const Vec& x, const Vec& y) const override;
    Vec project_tangent(const Vec& x, const Vec& u) const override;
    Vec random_base(Rng& rng) const override;
    double inner(const Vec&, const Vec& u, const Vec& w) const override { return u.dot(w); }
    Vec cotangent_to_tangent(const Vec&, const Vec& xi) const override { return xi; }
    Vec tangent_to_cotangent(const Vec&, const Vec& v) const override { return v; }
    // Closed-form parallel transport of a tangent vector from x to y along
    // the minimizing great circle.
    Vec transport_closed_form(const Vec& x, const Vec& y, const Vec& w) const;
};

struct HalfPlaneBox {
    double xmin = -30.0, xmax = 30.0, ymin = 2e-5, ymax = 40.0;
};

class HyperbolicHalfPlane final : public Manifold {
  public:
    explicit HyperbolicHalfPlane(HalfPlaneBox box = {});
    CurvatureKind curvature_kind() const override { return CurvatureKind::constant_negative; }
    bool in_domain(const Vec& x) const override;
    Mat metric(const Vec& x) const override;
    Vec geodesic_accel(const Vec& x, const Vec& v) const override;
    Vec transport_rhs(const Vec& x, const Vec& v, const Vec& w) const override;
    Mat curvature_matrix(const Vec&, const Vec&, const Mat&) const override;
    double gauss_curvature(const Vec&) const override { return -1.0; }
    double base_distance(const Vec& x, const Vec& y) const override;
    Vec connecting_direction(const Vec& x, const Vec& y) const override;
    bool has_christoffel() const override { return true; }
    std::vector<Mat> christoffel(const Vec& x) const override;
    Vec random_base(Rng& rng) const override;
    double inner(const Vec& x, const Vec& u, const Vec& w) const override {
        return u.dot(w) / (x[1] * x[1]);
    }
    Vec cotangent_to_tangent(const Vec& x, const Vec& xi) const override {
        return xi * (x[1] * x[1]);
    }
    Vec tangent_to_cotangent(const Vec& x, const Vec& v) const override {
        return v / (x[1] * x[1]);
    }
    const HalfPlaneBox& box() const { return box_; }

  private:
    HalfPlaneBox box_;
};

// Surface with metric dr^2 + f(r)^2 dtheta^2 on a rectangle; K = -f''/f.
class WarpedSurface final : public Manifold {
  public:
    // Profiles: "cosh" (f = cosh r, K = -1), "bump" (f = 1 + a*exp(-r^2),
    // variable-sign curvature).
    explicit WarpedSurface(std::string profile = "cosh", double rmax = 3.0,
                           double bump_amp = 0.25);
    CurvatureKind curvature_kind() const override { return kind_; }
    bool in_domain(const Vec& x) const override;
    Mat metric(const Vec& x) const override;
    Vec geodesic_accel(const Vec& x, const Vec& v) const override;
    Vec transport_rhs(const Vec& x, const Vec& v, const Vec& w) const override;
    Mat curvature_matrix(const Vec& x, const Vec&, const Mat&) const override;
    double gauss_curvature(const Vec& x) const override;
    double base_distance(const Vec& x, const Vec& y) const override;
    Vec connecting_direction(const Vec& x, const Vec& y) const override;
    bool has_christoffel() const override { return true; }
    std::vector<Mat> christoffel(const Vec& x) const override;
    Vec random_base(Rng& rng) const override;

  private:
    double f(double r) const;
    double fp(double r) const;
    double fpp(double r) const;
    std::string profile_;
    double rmax_;
    double amp_;
    CurvatureKind kind_;
};

// -- Module operations ------------------------------------------------------

Mat metric_at(const Manifold& m, const Vec& x);  // throws DomainError off-chart

struct CurvatureData {
    Vec x;
    Mat frame;         // columns E_1..E_{n-1}, perpendicular parallel frame
    Vec direction;     // E_n = gamma'(t)
    Mat R;             // (n-1)x(n-1) curvature matrix in that frame
    double gauss = 0;  // surfaces
    double frame_drift = 0;
};

// Christoffel symbols by central finite differences of the metric (step 1e-5).
std::vector<Mat> christoffel_fd(const Manifold& m, const Vec& x, double step = 1e-5);

// Curvature matrix R(t) in a parallel orthonormal frame propagated along the
// geodesic; throws on frame drift beyond 1e-6.
struct GeodesicSpec;
CurvatureData curvature_matrix_along(const Manifold& m, const GeodesicSpec& gamma, double t);

// Signed integral of the scalar curvature over the tubular neighborhood of
// width `halfwidth` around gamma|[a,b], by Fermi-coordinate quadrature
// (64x64 per unit length, one Richardson extrapolation).
struct GeodesicSpec {
    Vec x;  // start point
    Vec v;  // unit initial velocity
};
double integrated_curvature(const Manifold& m, const GeodesicSpec& gamma, double halfwidth,
                            double a, double b);

// Model registry keyed by name; parameters come from the harness config.
std::shared_ptr<Manifold> make_model(const std::string& kind);

}  // namespace geobeam
