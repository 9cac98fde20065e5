#pragma once

#include "geobeam/common.hpp"
#include "geobeam/manifold.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

namespace geobeam {

// Point rho = (x, xi) on the unit cosphere bundle; |xi|_g = 1.
struct PhasePoint {
    Vec x;
    Vec xi;
};

struct FlowOptions {
    double dt = 1e-3;
    int reorthonormalize_every = 100;
    std::optional<Mat> initial_frame;  // coord_dim x (n-1), perpendicular to v
};

// One RK4 step of the geodesic equation in (x, v) form with renormalization.
void rk4_geodesic_step(const Manifold& m, Vec& x, Vec& v, double h);

PhasePoint make_phase_point(const Manifold& m, const Vec& x, const Vec& direction);
double phase_distance(const Manifold& m, const PhasePoint& a, const PhasePoint& b);

// phi_t(rho); throws DomainError if the orbit leaves the chart box.
PhasePoint flow(const Manifold& m, const PhasePoint& rho, double t,
                const FlowOptions& opts = {});

// Geodesic + parallel frame + the two fundamental matrix Jacobi solutions:
//   A:  A(0) = 0,  A'(0) = Id   (conjugate solution)
//   B:  B(0) = Id, B'(0) = 0
// propagated in the parallel frame. Sampled every step from t=0 to t1
// (t1 may be negative; grid then runs backward).
class FlowSegment {
  public:
    struct State {
        double t;
        Vec x, v;
        Mat frame;          // coord_dim x (n-1)
        Mat A, Ad, B, Bd;   // (n-1) x (n-1)
    };

    const Manifold* model = nullptr;
    double dt = 0;
    std::vector<State> states;
    double t_requested = 0;
    double t_reached = 0;  // < |t_requested| if the orbit left the domain

    bool complete() const { return std::abs(t_reached - t_requested) < 1e-12; }
    const State& state_at(std::size_t i) const { return states[i]; }
    std::size_t size() const { return states.size(); }
    // Exact state at arbitrary time inside the covered window (re-integrates
    // the residual from the nearest stored grid point).
    State state_at_time(double t) const;

    // Perpendicular block of d(phi_t) in Jacobi coordinates (y, w) ->
    // (Y(t), Y'(t)): the 2(n-1) square matrix [[B, A], [B', A']].
    Mat dflow_perp(const State& s) const;

    double max_wronskian_drift() const;   // || Ad^T A - A^T Ad ||_max over states
    double max_symplectic_drift() const;  // || Bd^T A - B^T Ad + Id ||_max
};

FlowSegment propagate_linearization(const Manifold& m, const PhasePoint& rho, double T,
                                    const FlowOptions& opts = {});

// csv dump: t, x, xi, det A, smallest singular value of A
std::string segment_csv(const FlowSegment& seg, std::size_t stride = 1);

// Spectral norm of d(phi_t) restricted to the vertical (fiber) subspace, with
// the flow direction block included: max(1, sigma_max([A; A'])).
double operator_norm_dflow(const FlowSegment& seg, double t);

struct ConjugateReport {
    std::vector<std::pair<double, int>> points;  // (time, multiplicity)
    double window_lo = 0, window_hi = 0;
    double tol = 0;
};

// Rank drops of A(t) on the window: sign-change bracketing of det A plus
// smallest-singular-value refinement; multiplicity = #{sigma < tol * scale}.
ConjugateReport conjugate_points(const FlowSegment& seg, double window_lo, double window_hi,
                                 double tol = 1e-7);

struct RiccatiReport {
    double max_violation = 0;  // max over grid and probes of |<Ux,x>| - bound
    double worst_time = 0;
    int splits = 0;
    bool pass = false;
};

// Checks Riccati comparison for U = A' A^{-1} propagated from boundary data on
// [a,b] against k*max(|coth(k(t-a))|, |coth(k(t-b))|); splits the interval at
// interior conjugate points.
RiccatiReport riccati_bound_check(const std::function<Mat(double)>& R, int dim, double k,
                                  double a, double b, int grid = 400, int probes = 64,
                                  double tolerance = 1e-6, Rng* rng = nullptr);

struct LambdaEstimate {
    double lambda = 0;  // max over samples
    double lo = 0, hi = 0;
    int used = 0;
};

LambdaEstimate estimate_lambda_max(const Manifold& m, int sample_count, double T, Rng& rng);

// log(1/h) / (2 * Lambda), with the configured floor substituted when the
// estimate is consistent with zero.
double ehrenfest_time(double h, double lambda, double lambda_floor = 0.05);

struct SplittingEstimate {
    PhasePoint rho;
    Mat Eplus;   // 2(n-1) x (n-1), columns span the stable subspace (perp coords)
    Mat Eminus;  // unstable
    double residual = 0;        // invariance defect of d(phi_1)
    double horizon_defect = 0;  // direction drift between horizons T/2 and T
    double Bhat = 0;            // empirical Anosov constant
    double min_angle = 0;       // smallest principal angle between E+ and E-
    bool usable = false;
};

SplittingEstimate stable_unstable(const Manifold& m, const PhasePoint& rho, double T = 10.0,
                                  const FlowOptions& opts = {});

struct PandaResult {
    Mat basis;              // (n-1) x d columns: vertical directions kept
    double factor = 0;      // max |dphi_t V| / |dpi dphi_t V| over the window
    double c_hat = 0;       // (factor^2 - 1) * eps^2
    bool vacuous = false;   // subspace dimension 0
};

// Vertical subspace avoiding the kernels of A at conjugate times within
// (t0 - 2 eps, t0 + 2 eps); verifies the norm comparison on (t0 - eps, t0 + eps).
PandaResult panda_subspace(const FlowSegment& seg, double t0, double eps, int m_max);

// Exact hyperbolic toral automorphism on lattice points (a/Q, b/Q) with
// Q = 2^61 - 1; orbits are computed in modular arithmetic, so there is no
// roundoff growth along iterates.
class DiscreteHyperbolicSystem {
  public:
    static constexpr std::uint64_t Q = (1ull << 61) - 1;
    struct LatticeState {
        std::uint64_t a, b;
    };

    explicit DiscreteHyperbolicSystem(std::array<std::array<long, 2>, 2> mat = {{{2, 1}, {1, 1}}});

    double lambda_plus() const { return lambda_plus_; }
    double lambda_minus() const { return lambda_minus_; }
    double lambda_plus_signed() const { return lp_signed_; }
    double lambda_minus_signed() const { return lm_signed_; }
    const Eigen::Vector2d& eplus() const { return eplus_; }    // expanding direction
    const Eigen::Vector2d& eminus() const { return eminus_; }  // contracting direction
    const std::array<std::array<long, 2>, 2>& matrix() const { return m_; }

    LatticeState to_lattice(double x, double y) const;
    Eigen::Vector2d to_unit(const LatticeState& s) const;
    LatticeState step(const LatticeState& s) const;
    LatticeState step_back(const LatticeState& s) const;
    LatticeState power(const LatticeState& s, std::int64_t k) const;

    // Wrapped torus distance between unit-square points.
    static double torus_distance(const Eigen::Vector2d& p, const Eigen::Vector2d& q);

  private:
    std::array<std::array<long, 2>, 2> m_;
    std::array<std::array<std::uint64_t, 2>, 2> mq_, mq_inv_;
    double lambda_plus_ = 0, lambda_minus_ = 0;
    double lp_signed_ = 0, lm_signed_ = 0;
    Eigen::Vector2d eplus_, eminus_;
};

// k-fold exact action mod 1 on a unit-square point.
Vec discrete_step(const DiscreteHyperbolicSystem& sys, const Vec& point, std::int64_t k);

}  // namespace geobeam
