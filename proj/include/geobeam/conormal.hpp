#pragma once

#include "geobeam/common.hpp"
#include "geobeam/flow.hpp"
#include "geobeam/manifold.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace geobeam {

// Embedded submanifold H given by an explicit parametrization. Codimension k
// may equal n (a point, param_dim 0).
class Submanifold {
  public:
    static Submanifold point(std::shared_ptr<const Manifold> m, Vec x0);
    static Submanifold torus_circle(std::shared_ptr<const Manifold> m, double x2);
    static Submanifold sphere_equator(std::shared_ptr<const Manifold> m);
    static Submanifold halfplane_vertical(std::shared_ptr<const Manifold> m, double y0,
                                          double y1);

    const Manifold& model() const { return *model_; }
    std::shared_ptr<const Manifold> model_ptr() const { return model_; }
    const std::string& kind() const { return kind_; }
    int codim() const { return codim_; }
    int param_dim() const { return model_->dim() - codim_; }
    bool is_point() const { return codim_ == model_->dim(); }

    Vec eval(double u) const;          // x(u); param_dim <= 1 in this toolkit
    Vec tangent(double u) const;       // unit dx/du
    double param_lo() const { return lo_; }
    double param_hi() const { return hi_; }
    bool param_periodic() const { return periodic_; }
    double length() const;             // total parameter length (arc length)

    // nearest parameter of the base projection (closed form per kind)
    double nearest_param(const Vec& x) const;
    double base_offset(const Vec& x) const;  // signed distance-like f_1(x)

    // curvature + second fundamental form bound (0 for points and geodesics)
    double K_H() const { return K_H_; }

    bool is_geodesic() const;

  private:
    Submanifold() = default;
    std::shared_ptr<const Manifold> model_;
    std::string kind_;
    int codim_ = 0;
    Vec x0_;          // for points / level value
    double level_ = 0;
    double lo_ = 0, hi_ = 0;
    bool periodic_ = false;
    double K_H_ = 0;
};

// Point of SN*H: parameter on H (empty for point-H) plus the phase point.
struct ConormalPoint {
    double u = 0;       // base parameter (unused when H is a point)
    double fiber = 0;   // fiber angle (point-H) or branch sign (+1/-1) for curves
    PhasePoint rho;
};

// Tube Lambda_rho^tau(r): flow-out of the r-ball around the center.
struct Tube {
    int id = 0;
    ConormalPoint center;
    double tau = 0;
    double r = 0;
};

// Net on SN*H with pairwise Sasaki distance >= spacing/2 and covering radius
// <= spacing.
std::vector<ConormalPoint> sample_snh(const Submanifold& H, double spacing);

// sqrt(base^2 + fiber^2); fiber angle measured after parallel transport along
// the minimizing base geodesic. Sets *flagged when the base distance exceeds
// the injectivity estimate and a chordal fallback was used.
double sasaki_distance(const Manifold& m, const PhasePoint& a, const PhasePoint& b,
                       bool* flagged = nullptr);

// Defining function F: T*M -> R^{n+1} for SN*H with comparability
// (1/2) d <= |F| <= 2 d on a delta_F-neighborhood.
class DefiningFunction {
  public:
    Vec operator()(const PhasePoint& q) const;
    double delta_F() const { return delta_F_; }
    double right_inverse_bound() const { return rinv_bound_; }
    int components() const;

    friend DefiningFunction defining_function(const Submanifold& H, Rng& rng);

  private:
    const Submanifold* H_ = nullptr;
    double delta_F_ = 0;
    double rinv_bound_ = 0;
};

DefiningFunction defining_function(const Submanifold& H, Rng& rng);

// psi = F o phi_t
Vec psi_eval(const DefiningFunction& F, const Manifold& m, const PhasePoint& rho, double t);

bool tube_membership(const Manifold& m, const Tube& tube, const PhasePoint& q);

// Largest tau <= 1 (bisection, 6 rounds) such that sampled flow-outs of the
// slice through SN*H do not self-intersect. Lower-bound estimate.
double tau_inj(const Submanifold& H, double spacing = 0.05);

struct SplittingClass {
    int m_plus = 0, m_minus = 0;
    bool in_M_H = false, in_S_H = false, in_A_H = false;
    bool indeterminate = false;
    double min_gap_angle = 0;  // smallest principal angle actually observed
};

// Classification of span(T) against the estimated E+/E- (columns orthonormal;
// all in the same coordinates). Principal angles below `tol` count as
// intersections; the gray zone [tol, gray) flags indeterminate.
SplittingClass classify_subspaces(const Mat& T, const Mat& Eplus, const Mat& Eminus,
                                  double tol = 1e-3, double gray = 1e-2);

// Tangent space of SN*H at a conormal point, in the perpendicular Jacobi
// coordinates (y, w) of the segment frame at t=0.
Mat snh_tangent_perp(const Submanifold& H, const ConormalPoint& cp, const Mat& frame0);

SplittingClass classify_splitting(const Submanifold& H, const ConormalPoint& cp,
                                  const SplittingEstimate& sp, const Mat& frame0);

// Theta^{+-}(v) = |pi_mp v| / |pi_pm v| with oblique projections along the
// complementary subspace + flow direction. `v` and E's in perp coordinates
// extended by the flow component (first entry).
std::pair<double, double> theta_angles(const Vec& v_perp, const Mat& Eplus, const Mat& Eminus);

// csv export of a sample set with classifications: u, x, xi, m+, m-, flags
std::string snh_classification_csv(const Submanifold& H,
                                   const std::vector<ConormalPoint>& net,
                                   const std::vector<SplittingClass>& classes);

}  // namespace geobeam
