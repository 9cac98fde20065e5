#pragma once

#include "geobeam/common.hpp"
#include "geobeam/cover.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace geobeam {

enum class Provenance { empirical_fit, config, existential };

struct LedgerEntry {
    double value = 0;
    Provenance provenance = Provenance::config;
};

// Named empirical constants with provenance; evaluations must find every
// constant they use here -- no silent defaults.
class ConstantsLedger {
  public:
    void set(const std::string& name, double value, Provenance p) {
        entries_[name] = {value, p};
    }
    bool has(const std::string& name) const { return entries_.count(name) > 0; }
    double get(const std::string& name) const {
        const auto it = entries_.find(name);
        if (it == entries_.end())
            throw ConfigError("ConstantsLedger: missing constant '" + name + "'");
        return it->second.value;
    }
    const std::map<std::string, LedgerEntry>& entries() const { return entries_; }

    static ConstantsLedger defaults();

  private:
    std::map<std::string, LedgerEntry> entries_;
};

enum class ScheduleKind { noConj, tangentSpace };

struct Schedule {
    ScheduleKind kind = ScheduleKind::noConj;
    std::vector<double> h_grid;
    std::vector<bool> feasible;  // per grid point; see make_schedule
    double eps = 0;
    double delta = 0;
    double alpha = 0;
    double t0 = 1.0;
    double b = 0;        // T0 = b log(1/h) (noConj)
    double c_tilde = 0;  // T0 = (eps/c_tilde) log(1/h) (tangentSpace)
    double lambda = 0;   // expansion-rate value used

    double R_of(double h) const { return std::pow(h, eps); }
    double r0_of(double h) const { return std::pow(h, delta); }
    double T0_of(double h) const;
    std::vector<double> feasible_grid() const {
        std::vector<double> out;
        for (std::size_t i = 0; i < h_grid.size(); ++i)
            if (feasible[i]) out.push_back(h_grid[i]);
        return out;
    }
};

Schedule make_schedule(ScheduleKind kind, double eps, std::vector<double> h_grid,
                       const ConstantsLedger& ledger, double R0 = 1.0);

struct LadderCounts {
    std::vector<double> G;  // per-rung counts
    std::vector<double> t;  // t_l
    std::vector<double> T;  // T_l
    double B = 0;
};

struct BoundEstimate {
    double h = 0;
    double bad_term = 0;      // |B|^{1/2}
    double good_term = 0;     // sum (|G_l| t_l / T_l)^{1/2}
    double prefactor = 0;     // C_{n,k} D ||w||_inf R(h)^{(n-1)/2} / tau^{1/2}
    double bound = 0;
    double classical = 0;
    double log_improved = 0;
    // quasimode slots, identically zero for exact eigenfunctions; the formulas
    // are echoed in reports
    double quasimode_term = 0;
    double hN_term = 0;
    std::string quasimode_formula;
};

struct BoundInputs {
    int n = 2;            // dim M
    int k = 1;            // codim H
    double tau = 0.5;
    double D = 1;         // number of cover color classes
    double w_sup = 1.0;
    double R = 0;         // R(h): tube radius at this h
};

// Average-bound evaluation from a partition's counts.
BoundEstimate evaluate_bound(const LadderCounts& counts, double h, const BoundInputs& in,
                             const ConstantsLedger& ledger,
                             const std::optional<Schedule>& schedule = std::nullopt);

LadderCounts counts_from_partition(const CoverPartition& part);

double baseline(double lambda, int k, const std::string& kind);

// -- Quantitative implicit function theorem ----------------------------------

struct IftBounds {
    std::array<double, 3> B{};       // sup |d_{x_i} d_{x_0} f| on the validity box
    std::array<double, 3> Btilde{};  // sup |d_{x_i} f| (i = 1, 2)
    std::array<int, 3> m{};          // dims of x_0, x_1, x_2
    double r_max = 10.0;             // box on which the bounds are valid
};

struct IftResult {
    bool feasible = false;
    std::array<double, 3> radii{};
    double S = 0;        // contraction factor certificate
    double L_norm = 0;   // ||(D_{x0} f(0,0,0))^{-1}|| (computed)
    int convergence_failures = 0;
    double observed_ratio = 0;
};

// Radii maximizing r1*r2 subject to S = ||L|| sum m_i B_i r_i < 1 and
// S r0 + ||L|| (m_1 Btilde_1 r_1 + m_2 Btilde_2 r_2) <= r0 (log-lattice grid
// search), then the contraction iteration is verified on sampled starts.
IftResult quantitative_ift(
    const std::function<Vec(const Vec&, const Vec&, const Vec&)>& f, const IftBounds& bounds,
    int verification_samples = 100, Rng* rng = nullptr);

// One-sided finite-difference estimate of inf |H_p r_H| over SN*H samples.
double estimate_i_H(const Submanifold& H, double dt = 1e-4);

}  // namespace geobeam
