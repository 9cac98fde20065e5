#include "doctest.h"

#include "geobeam/harness.hpp"
#include "geobeam/io.hpp"

#include <filesystem>

using namespace geobeam;

namespace {

const char* kCatScenario = R"({
  "schema_version": 1,
  "seed": 7,
  "model": {"kind": "catmap"},
  "catmap": {"length": 2.0},
  "cover": {"r": 0.015625},
  "window": {"t0": 2.0, "T0": 128.0},
  "partition": {"kind": "ladder"},
  "bound": {"h_grid": [1e-3, 1e-4]}
})";

std::string slurp_all_csv(const std::string& dir) {
    std::string all;
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) all += read_file(f.string());
    return all;
}

}  // namespace

TEST_CASE("scenario config validation") {
    CHECK_THROWS_AS(load_scenario("{}"), ConfigError);  // missing schema_version
    CHECK_THROWS_AS(load_scenario(R"({"schema_version": 2, "model": {"kind": "torus2"}})"),
                    ConfigError);
    CHECK_THROWS_AS(
        load_scenario(
            R"({"schema_version": 1, "model": {"kind": "torus2"}, "typo_key": 1})"),
        ConfigError);
    CHECK_THROWS_AS(
        load_scenario(
            R"({"schema_version": 1, "model": {"kind": "torus2", "bogus": 3}})"),
        ConfigError);
    auto sc = load_scenario(kCatScenario);
    CHECK(sc.model_kind == "catmap");
    CHECK(sc.partition_kind == "ladder");
    CHECK(sc.cat_segment.length == 2.0);
}

TEST_CASE("deterministic reruns produce identical artifacts") {
    auto sc = load_scenario(kCatScenario);
    const std::string d1 = "/tmp/geobeam_test_run_a";
    const std::string d2 = "/tmp/geobeam_test_run_b";
    std::filesystem::remove_all(d1);
    std::filesystem::remove_all(d2);
    const auto r1 = run(sc, d1);
    const auto r2 = run(sc, d2);
    CHECK_FALSE(r1.failed);
    CHECK_FALSE(r2.failed);
    CHECK(r1.scenario_hash == r2.scenario_hash);
    CHECK(content_hash(slurp_all_csv(d1)) == content_hash(slurp_all_csv(d2)));

    // a different seed changes the hash-bearing config
    Scenario sc2 = sc;
    sc2.seed = 8;
    CHECK(hash_hex(content_hash(sc2.canonical())) != r1.scenario_hash);
}

TEST_CASE("thread count does not change artifacts") {
    auto sc = load_scenario(kCatScenario);
    Scenario sc2 = sc;
    sc2.threads = 2;
    const std::string d1 = "/tmp/geobeam_test_thr1";
    const std::string d2 = "/tmp/geobeam_test_thr2";
    std::filesystem::remove_all(d1);
    std::filesystem::remove_all(d2);
    run(sc, d1);
    run(sc2, d2);
    CHECK(content_hash(slurp_all_csv(d1)) == content_hash(slurp_all_csv(d2)));
}

TEST_CASE("csv artifacts carry the scenario hash header") {
    auto sc = load_scenario(kCatScenario);
    const std::string dir = "/tmp/geobeam_test_run_hdr";
    std::filesystem::remove_all(dir);
    const auto rep = run(sc, dir);
    for (const auto& art : rep.artifacts) {
        if (art.size() < 4 || art.substr(art.size() - 4) != ".csv") continue;
        const std::string content = read_file(art);
        CHECK(content.rfind("# ", 0) == 0);
        CHECK(content.find(rep.scenario_hash) != std::string::npos);
    }
}

TEST_CASE("verify dispatch") {
    CHECK_THROWS_AS(verify("unknown-suite"), ConfigError);
    const auto vr = verify("ift");
    CHECK(vr.failures == 0);
}
