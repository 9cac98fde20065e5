#pragma once

#include "geobeam/bound.hpp"
#include "geobeam/common.hpp"
#include "geobeam/conormal.hpp"
#include "geobeam/cover.hpp"
#include "geobeam/eigenlab.hpp"

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace geobeam {

struct Scenario {
    std::string model_kind;
    // submanifold
    std::string h_kind;
    Vec h_at;            // point location
    double h_level = 0;  // circle level
    double h_y0 = 1.0, h_y1 = M_E;
    // cat map
    std::array<std::array<long, 2>, 2> cat_matrix{{{2, 1}, {1, 1}}};
    CatSegmentSpec cat_segment;
    // cover & window
    double tau = 0.5;
    double r = 0.05;
    double t0 = 2.0;
    double T0 = 7.0;
    std::string partition_kind = "single";  // or "ladder"
    // bound sweep
    std::vector<double> h_grid;
    double weight_sup = 1.0;
    // eigen comparison
    std::string eigen_kind;  // "", "zonal_sweep", "torus_sweep"
    std::vector<int> eigen_ells;
    // misc
    std::uint64_t seed = 1;
    int threads = 1;
    bool estimate_lambda = true;

    std::string canonical() const;  // deterministic serialization (hashed)
};

Scenario load_scenario(const std::string& json_text);
Scenario scenario_from_file(const std::string& path);

struct StageTiming {
    std::string stage;
    double ms = 0;
};

struct InvariantRecord {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct RunReport {
    std::string scenario_hash;
    std::vector<StageTiming> timings;
    std::vector<std::string> artifacts;
    std::vector<InvariantRecord> invariants;
    bool failed = false;
    std::string to_json() const;
};

RunReport run(const Scenario& sc, const std::string& out_dir);

struct VerifyResult {
    std::string suite;
    int checks = 0;
    int failures = 0;
    std::vector<std::string> messages;
};

// suite in {jacobi, riccati, cover, ladder, ift, eigen}
VerifyResult verify(const std::string& suite, std::uint64_t seed = 7);

}  // namespace geobeam
