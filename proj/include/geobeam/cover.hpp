#pragma once

#include "geobeam/common.hpp"
#include "geobeam/conormal.hpp"
#include "geobeam/flow.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace geobeam {

// Dynamics + geometry adapter the cover algorithms run against: either the
// geodesic flow around SN*H (ContinuousBeam) or the exact toral automorphism
// around a segment aligned with an eigendirection (CatBeam).
class BeamSystem {
  public:
    virtual ~BeamSystem() = default;

    virtual int sn_dim() const = 0;    // n-1: dimension of the SN*H analog
    virtual int embed_dim() const = 0;
    virtual bool discrete_time() const = 0;
    virtual double tau() const = 0;    // tube half-length (0 for discrete)
    virtual double lambda_hat() const = 0;
    virtual double net_extent() const = 0;  // measure of the SN*H analog

    virtual std::size_t net_size() const = 0;
    virtual const Vec& net_embed(std::size_t i) const = 0;
    // embed-space distance (wrap-aware); approximates the Sasaki distance up
    // to metric_scale near the slab
    virtual double dist(const Vec& a, const Vec& b) const = 0;
    virtual double metric_scale(const Vec& p) const { (void)p; return 1.0; }

    virtual int probes_per_tube() const = 0;
    // positions of probe j of the tube centered at net index i, radius r, at
    // the given times; writes tgrid.size() rows of embed_dim doubles
    virtual void probe_path(std::size_t i, int j, double r, const std::vector<double>& tgrid,
                            std::vector<double>& out_aos) const = 0;

    // point cloud sampling Lambda^tau_{net}(0) (center orbits), with owners
    virtual void slab(double step, const std::vector<std::size_t>& net_indices,
                      std::vector<double>& out_aos, std::vector<std::size_t>& owner) const = 0;
    virtual bool near_slab(const Vec& p, double margin) const { (void)p; (void)margin; return true; }

    // random point of Lambda^tau(radius): a Sasaki-ball perturbation of a net
    // point flowed by |t| <= tau, in embed coordinates
    virtual Vec random_slab_point(Rng& rng, double radius) const = 0;

    // exact tube membership: does the tube centered at net index i (radius r)
    // contain the embedded phase point?
    virtual bool tube_contains(std::size_t i, const Vec& p, double tau, double r) const = 0;

    // sup |det J_t| certificate for the tangent of the analog (NaN if none)
    virtual double det_contraction(std::size_t i, double t) const {
        (void)i; (void)t;
        return std::numeric_limits<double>::quiet_NaN();
    }
};

std::shared_ptr<BeamSystem> make_continuous_beam(std::shared_ptr<const Manifold> model,
                                                 std::shared_ptr<const Submanifold> H,
                                                 double tau, double net_spacing,
                                                 double lambda_hat);

struct CatSegmentSpec {
    Eigen::Vector2d base{0.12937, 0.76644};  // generic anchor, snapped to the lattice
    double length = 4.0;
    bool stable_direction = true;  // segment along the contracting eigendirection
};

std::shared_ptr<BeamSystem> make_cat_beam(std::shared_ptr<const DiscreteHyperbolicSystem> sys,
                                          const CatSegmentSpec& spec);

// -- Good covers -------------------------------------------------------------

struct GoodCover {
    std::shared_ptr<BeamSystem> sys;
    double tau = 0;
    double r = 0;
    std::vector<std::size_t> centers;  // net indices of tube centers
    std::vector<int> color;            // coloring into D classes
    int D = 0;

    std::size_t size() const { return centers.size(); }
};

struct CoverOptions {
    double D_max = 16;        // dimensional constant cap
    double separation = 0.88;  // center separation in units of r (chord metric)
    int mc_samples = 10000;   // Monte-Carlo cover verification
    bool verify = true;
    std::uint64_t seed = 20240901;
};

GoodCover build_good_cover(std::shared_ptr<BeamSystem> sys, double tau, double r,
                           const CoverOptions& opts = {});

// Monte-Carlo check of the cover property: samples of Lambda^tau(r/2) must
// all lie in some tube. Returns the number of misses.
int verify_cover_property(const GoodCover& cover, int samples, Rng& rng);

// disjointness of each color class at radius 3r (center separation > 6r)
bool verify_coloring(const GoodCover& cover);

// -- Looping classification ---------------------------------------------------

struct ReturnWindow {
    double t_begin = 0, t_end = 0;
};

struct LoopingReport {
    double t0 = 0, T0 = 0;
    double detect_radius = 0;
    std::vector<std::vector<ReturnWindow>> windows;  // per tube, merged, sorted
    std::vector<double> nearest_return;              // per tube (inf if none seen)
};

struct LoopOptions {
    double probe_step_factor = 4.0;  // step = min(tau/4, r/(2 e^Lambda))
    double detect_factor = 1.5;      // detection radius = factor * r
    double slab_step_factor = 2.0;   // slab sampled at r/2
    int threads = 1;
};

LoopingReport classify_looping(const GoodCover& cover, double t0, double T0,
                               const LoopOptions& opts = {});

// -- Partitions ---------------------------------------------------------------

struct Rung {
    std::vector<std::size_t> tubes;  // indices into cover.centers
    double t = 0, T = 0;
};

struct CoverPartition {
    std::vector<std::size_t> bad;
    std::vector<Rung> rungs;
    // diagnostics
    int union_verification_passes = 0;
    std::vector<std::size_t> moved_by_union_test;
};

// Single window: B = tubes with any return; the rest form one rung, union
// re-verified from scratch at double probe density (offenders moved greedily).
CoverPartition partition_single_window(const GoodCover& cover, const LoopingReport& report,
                                       double t0, double T0, const LoopOptions& opts = {});

// Union-level non-self-looping test of a tube subset at a probe-density
// multiplier. Returns offending tube indices (empty = non-looping).
std::vector<std::size_t> union_looping_offenders(const GoodCover& cover,
                                                 const std::vector<std::size_t>& subset,
                                                 double t0, double T0, double density_mult,
                                                 const LoopOptions& opts = {});

// -- Controlled refinement & dyadic ladder -------------------------------------

struct RemovalBall {
    Vec center;       // embed coordinates
    double radius = 0;
    double t_hit = 0;
};

struct RefinementResult {
    bool feasible = false;
    double t0_eff = 0;                 // start of the certified window
    double removed_budget_used = 0;    // sum radius^{n-1} / sum R_i^{n-1}
    std::vector<RemovalBall> balls;
    std::string diagnostic;
};

// One refinement round (contraction regime): cover the landing zones of the
// active family by shrunken balls subject to the radius-sum budget
// sum r_k^{n-1} <= eps * sum R_i^{n-1}.
RefinementResult controlled_refinement(const GoodCover& cover,
                                       const std::vector<std::size_t>& active,
                                       const std::function<double(double)>& f_decay,
                                       double eps, double t0, double T0,
                                       const LoopOptions& opts = {});

struct LadderOptions {
    double eps0 = 0.2;  // per-round geometric budget fraction
    LoopOptions loop;
};

struct LadderResult {
    CoverPartition partition;
    std::vector<std::size_t> rung_counts;
    double fitted_ratio = 0;   // geometric ratio fitted over nonzero rungs
    double c_hat = 0;          // max_l |G_l| (1/eps0)^l r^{n-1}
};

// Dyadic ladder: rung l certified non-looping on [t0_eff, 2^{-l} T0] via the
// contraction refinement; requires det-contraction certificates.
LadderResult dyadic_ladder(const GoodCover& cover, const LoopingReport& report, double t0,
                           double T0, const LadderOptions& opts = {});

// -- Recurrence gap (surface Gauss-Bonnet mechanism) ---------------------------

struct GapReport {
    double r = 0;
    double T = 0;
    double s_star = 0;        // diameter of the per-window looping neighborhood
    double c2_hat = 0;        // calibrated scale: s_star <= c2_hat^2 ln(c4/r)^{-2}
    double c4 = 1.0;
    std::vector<double> r_grid;
    std::vector<double> s_grid;          // s*(r) over the grid
    std::vector<double> window_counts;   // s*(r)/r1-style per-window counts
    bool pass = false;
};

// Gauss-Bonnet quadrilateral mechanism on a negatively curved surface with H
// a geodesic: certifies that tubes returning in a common window have centers
// within an ln(1/r)^{-2}-size neighborhood.
GapReport recurrence_gap_check(const Submanifold& H, double r, double T, double r1);

// Gauss-Bonnet fixtures shared with the acceptance suite.
struct GaussBonnetReport {
    double angle_sum = 0;
    double defect = 0;       // 2 pi - exterior angle sum - sides... (see impl)
    double curvature_integral = 0;
    double mismatch = 0;     // |defect - integral|
};
GaussBonnetReport spherical_right_triangle_check();
GaussBonnetReport hyperbolic_quadrilateral_check(double c, double r1, double r2);

// -- persistence ----------------------------------------------------------------

std::string cover_to_json(const GoodCover& cover, const std::string& model_name,
                          const std::string& h_descriptor);
// csv: tube_id,window_start,window_end,min_return_distance
std::string looping_report_csv(const LoopingReport& rep, const std::string& scenario_hash);

}  // namespace geobeam
