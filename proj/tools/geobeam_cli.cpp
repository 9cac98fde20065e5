#include "geobeam/harness.hpp"
#include "geobeam/io.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>

using namespace geobeam;

namespace {

Scenario load_with_overrides(const std::string& config, std::uint64_t seed_override,
                             bool seed_given, int threads) {
    std::string path = config;
    if (path.empty()) {
        const char* dir = std::getenv("GEOBEAM_DATA_DIR");
        if (dir != nullptr) path = std::string(dir) + "/scenario.json";
    }
    if (path.empty()) throw ConfigError("no --config given and GEOBEAM_DATA_DIR not set");
    if (!std::filesystem::exists(path))
        throw ConfigError("scenario config not found: " + path);
    Scenario sc = scenario_from_file(path);
    if (seed_given) sc.seed = seed_override;
    if (threads > 0) sc.threads = threads;
    return sc;
}

int dispatch(const std::string& cmd, const Scenario& sc, const std::string& out_dir) {
    // every subcommand runs the pipeline prefix it needs; run = full pipeline
    Scenario staged = sc;
    if (cmd == "cover") {
        staged.partition_kind = "single";
        staged.h_grid.clear();
        staged.eigen_kind.clear();
        staged.T0 = std::max(staged.t0 + 0.5, staged.t0 * 1.5);  // minimal window
    } else if (cmd == "loops" || cmd == "partition") {
        staged.h_grid.clear();
        staged.eigen_kind.clear();
    } else if (cmd == "bound") {
        staged.eigen_kind.clear();
    } else if (cmd == "spectrum") {
        if (staged.eigen_kind.empty()) throw ConfigError("spectrum: config has no eigen block");
    }
    const RunReport rep = run(staged, out_dir);
    std::cout << "scenario " << rep.scenario_hash << (rep.failed ? " FAILED" : " ok") << "\n";
    for (const auto& inv : rep.invariants)
        std::cout << (inv.pass ? "  [pass] " : "  [FAIL] ") << inv.name
                  << (inv.detail.empty() ? "" : " (" + inv.detail + ")") << "\n";
    for (const auto& a : rep.artifacts) std::cout << "  wrote " << a << "\n";
    return rep.failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"geobeam: geodesic-beam covers, non-self-looping partitions, and "
                 "eigenfunction-average bounds on model manifolds"};
    app.require_subcommand(1);

    std::string config;
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    bool seed_given = false;
    int threads = 0;
    app.add_option("--config", config, "scenario config path (JSON)");
    app.add_option("--out", out_dir, "output directory");
    auto* seed_opt = app.add_option("--seed", seed, "override the scenario seed");
    app.add_option("--threads", threads, "worker threads for the looping classifier");

    std::string verify_suite;
    auto* sub_cover = app.add_subcommand("cover", "build and persist a good cover");
    auto* sub_loops = app.add_subcommand("loops", "classify looping tubes");
    auto* sub_partition = app.add_subcommand("partition", "good/bad partition or ladder");
    auto* sub_bound = app.add_subcommand("bound", "evaluate the average bound sweep");
    auto* sub_spectrum = app.add_subcommand("spectrum", "eigenfunction comparison records");
    auto* sub_run = app.add_subcommand("run", "full pipeline");
    auto* sub_verify = app.add_subcommand("verify", "run a module invariant battery");
    sub_verify->add_option("suite", verify_suite, "jacobi|riccati|cover|ladder|ift|eigen")
        ->required();

    for (auto* sub : app.get_subcommands({})) (void)sub;
    app.fallthrough();
    for (CLI::App* sub :
         {sub_cover, sub_loops, sub_partition, sub_bound, sub_spectrum, sub_run, sub_verify})
        sub->fallthrough();

    CLI11_PARSE(app, argc, argv);
    seed_given = seed_opt->count() > 0;

    try {
        if (sub_verify->parsed()) {
            const VerifyResult vr = verify(verify_suite, seed_given ? seed : 7);
            std::cout << "suite " << vr.suite << ": " << (vr.checks - vr.failures) << "/"
                      << vr.checks << " checks passed\n";
            for (const auto& m : vr.messages) std::cout << "  " << m << "\n";
            return vr.failures == 0 ? 0 : 1;
        }
        const Scenario sc = load_with_overrides(config, seed, seed_given, threads);
        std::string cmd = "run";
        if (sub_cover->parsed()) cmd = "cover";
        if (sub_loops->parsed()) cmd = "loops";
        if (sub_partition->parsed()) cmd = "partition";
        if (sub_bound->parsed()) cmd = "bound";
        if (sub_spectrum->parsed()) cmd = "spectrum";
        if (sub_run->parsed()) cmd = "run";
        return dispatch(cmd, sc, out_dir);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const InvariantError& e) {
        std::cerr << "invariant failure: " << e.what() << "\n";
        return 1;
    } catch (const GeobeamError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
