#include "geobeam/harness.hpp"

#include "geobeam/flow.hpp"
#include "geobeam/io.hpp"

#include "json.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>

namespace geobeam {
namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::vector<std::string>& allowed,
                    const std::string& where) {
    for (const auto& [key, val] : j.items()) {
        (void)val;
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw ConfigError("config: unknown key '" + key + "' in " + where);
    }
}

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::shared_ptr<const Submanifold> make_submanifold(const Scenario& sc,
                                                    std::shared_ptr<const Manifold> model) {
    if (sc.h_kind == "point") {
        Vec at = sc.h_at;
        if (at.size() == 0) {
            if (model->coord_dim() == 3) {
                at.resize(3);
                at << 1, 0, 0;
            } else {
                at = Vec::Zero(model->coord_dim());
                if (dynamic_cast<const HyperbolicHalfPlane*>(model.get()) != nullptr)
                    at[1] = 1.0;
            }
        }
        return std::make_shared<Submanifold>(Submanifold::point(model, at));
    }
    if (sc.h_kind == "torus_circle")
        return std::make_shared<Submanifold>(Submanifold::torus_circle(model, sc.h_level));
    if (sc.h_kind == "equator")
        return std::make_shared<Submanifold>(Submanifold::sphere_equator(model));
    if (sc.h_kind == "vertical_geodesic")
        return std::make_shared<Submanifold>(
            Submanifold::halfplane_vertical(model, sc.h_y0, sc.h_y1));
    throw ConfigError("unknown submanifold kind: " + sc.h_kind);
}

}  // namespace

std::string Scenario::canonical() const {
    json j;
    j["schema_version"] = 1;
    j["model"] = model_kind;
    j["h_kind"] = h_kind;
    j["h_at"] = std::vector<double>(h_at.data(), h_at.data() + h_at.size());
    j["h_level"] = h_level;
    j["h_y0"] = h_y0;
    j["h_y1"] = h_y1;
    j["cat_matrix"] = cat_matrix;
    j["cat_base"] = {cat_segment.base.x(), cat_segment.base.y()};
    j["cat_length"] = cat_segment.length;
    j["cat_stable"] = cat_segment.stable_direction;
    j["tau"] = tau;
    j["r"] = r;
    j["t0"] = t0;
    j["T0"] = T0;
    j["partition"] = partition_kind;
    j["h_grid"] = h_grid;
    j["weight_sup"] = weight_sup;
    j["eigen_kind"] = eigen_kind;
    j["eigen_ells"] = eigen_ells;
    j["seed"] = seed;
    return j.dump();
}

Scenario load_scenario(const std::string& json_text) {
    json j = json::parse(json_text);
    reject_unknown(j, {"schema_version", "seed", "threads", "model", "submanifold", "cover",
                       "window", "partition", "bound", "eigen", "catmap", "estimate_lambda"},
                   "root");
    if (!j.contains("schema_version") || j["schema_version"].get<int>() != 1)
        throw ConfigError("config: schema_version 1 required");
    Scenario sc;
    sc.seed = j.value("seed", 1u);
    sc.threads = j.value("threads", 1);
    sc.estimate_lambda = j.value("estimate_lambda", true);

    const auto& jm = j.at("model");
    reject_unknown(jm, {"kind"}, "model");
    sc.model_kind = jm.at("kind").get<std::string>();

    if (j.contains("submanifold")) {
        const auto& jh = j.at("submanifold");
        reject_unknown(jh, {"kind", "at", "level", "y0", "y1"}, "submanifold");
        sc.h_kind = jh.at("kind").get<std::string>();
        if (jh.contains("at")) {
            const auto v = jh.at("at").get<std::vector<double>>();
            sc.h_at = Eigen::Map<const Vec>(v.data(), static_cast<int>(v.size()));
        }
        sc.h_level = jh.value("level", 0.0);
        sc.h_y0 = jh.value("y0", 1.0);
        sc.h_y1 = jh.value("y1", M_E);
    }
    if (j.contains("cover")) {
        const auto& jc = j.at("cover");
        reject_unknown(jc, {"tau", "r"}, "cover");
        sc.tau = jc.value("tau", 0.5);
        sc.r = jc.value("r", 0.05);
    }
    if (j.contains("window")) {
        const auto& jw = j.at("window");
        reject_unknown(jw, {"t0", "T0"}, "window");
        sc.t0 = jw.value("t0", 2.0);
        sc.T0 = jw.value("T0", 7.0);
    }
    if (j.contains("partition")) {
        const auto& jp = j.at("partition");
        reject_unknown(jp, {"kind"}, "partition");
        sc.partition_kind = jp.value("kind", std::string("single"));
    }
    if (j.contains("bound")) {
        const auto& jb = j.at("bound");
        reject_unknown(jb, {"h_grid", "weight_sup"}, "bound");
        if (jb.contains("h_grid")) sc.h_grid = jb.at("h_grid").get<std::vector<double>>();
        sc.weight_sup = jb.value("weight_sup", 1.0);
    }
    if (j.contains("eigen")) {
        const auto& je = j.at("eigen");
        reject_unknown(je, {"kind", "ells"}, "eigen");
        sc.eigen_kind = je.value("kind", std::string(""));
        if (je.contains("ells")) sc.eigen_ells = je.at("ells").get<std::vector<int>>();
    }
    if (j.contains("catmap")) {
        const auto& jc = j.at("catmap");
        reject_unknown(jc, {"matrix", "base", "length", "stable"}, "catmap");
        if (jc.contains("matrix")) {
            const auto mm = jc.at("matrix").get<std::vector<std::vector<long>>>();
            if (mm.size() != 2 || mm[0].size() != 2) throw ConfigError("catmap.matrix: 2x2");
            sc.cat_matrix = {{{mm[0][0], mm[0][1]}, {mm[1][0], mm[1][1]}}};
        }
        if (jc.contains("base")) {
            const auto bb = jc.at("base").get<std::vector<double>>();
            sc.cat_segment.base = {bb.at(0), bb.at(1)};
        }
        sc.cat_segment.length = jc.value("length", 1.0);
        sc.cat_segment.stable_direction = jc.value("stable", true);
    }
    return sc;
}

Scenario scenario_from_file(const std::string& path) {
    return load_scenario(read_file(path));
}

std::string RunReport::to_json() const {
    json j;
    j["scenario_hash"] = scenario_hash;
    json jt = json::array();
    for (const auto& t : timings) jt.push_back({{"stage", t.stage}, {"ms", t.ms}});
    j["timings"] = jt;
    j["artifacts"] = artifacts;
    json ji = json::array();
    for (const auto& inv : invariants)
        ji.push_back({{"name", inv.name}, {"pass", inv.pass}, {"detail", inv.detail}});
    j["invariants"] = ji;
    j["failed"] = failed;
    return j.dump(2) + "\n";
}

RunReport run(const Scenario& sc, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    RunReport rep;
    rep.scenario_hash = hash_hex(content_hash(sc.canonical()));
    double t_start = now_ms();
    auto mark = [&](const std::string& stage) {
        rep.timings.push_back({stage, now_ms() - t_start});
        t_start = now_ms();
    };
    auto check = [&](const std::string& name, bool ok, const std::string& detail) {
        rep.invariants.push_back({name, ok, detail});
        if (!ok) rep.failed = true;
    };
    Rng root(sc.seed);

    // -- build the beam system -------------------------------------------------
    std::shared_ptr<BeamSystem> beam;
    int dim_n = 2, codim_k = 1;
    const bool is_cat = sc.model_kind == "catmap";
    std::shared_ptr<const Manifold> model;
    std::shared_ptr<const Submanifold> H;
    double lambda_hat = 0.05;
    if (is_cat) {
        auto cat = std::make_shared<DiscreteHyperbolicSystem>(sc.cat_matrix);
        lambda_hat = std::log(cat->lambda_plus());
        beam = make_cat_beam(cat, sc.cat_segment);
        dim_n = 2;
        codim_k = 1;
    } else {
        model = make_model(sc.model_kind);
        H = make_submanifold(sc, model);
        dim_n = model->dim();
        codim_k = H->codim();
        if (sc.estimate_lambda) {
            Rng lrng = root.fork(11);
            const auto le = estimate_lambda_max(*model, 32, 8.0, lrng);
            lambda_hat = std::max(le.lambda, 0.05);
        }
        // precondition: tau <= tau_inj / 2
        const double ti = tau_inj(*H);
        if (sc.tau > 0.5 * ti + 1e-9)
            throw ConfigError("scenario: tau exceeds tau_inj/2 = " + format_double(0.5 * ti));
        beam = make_continuous_beam(model, H, sc.tau, 0.2 * sc.r, lambda_hat);
    }
    mark("setup");

    // -- cover -------------------------------------------------------------------
    CoverOptions copts;
    copts.seed = sc.seed ^ 0x9e3779b97f4a7c15ull;
    copts.verify = false;  // the pipeline runs its own seeded verification below
    GoodCover cover = build_good_cover(beam, is_cat ? 0.0 : sc.tau, sc.r, copts);
    check("cover.coloring_disjoint_3r", verify_coloring(cover),
          "D = " + std::to_string(cover.D));
    {
        Rng mc = root.fork(23);
        const int misses = verify_cover_property(cover, copts.mc_samples, mc);
        check("cover.mc_cover_property", misses == 0, std::to_string(misses) + " misses");
    }
    write_file(out_dir + "/cover.json",
               cover_to_json(cover, sc.model_kind, sc.h_kind.empty() ? "cat_segment" : sc.h_kind));
    rep.artifacts.push_back(out_dir + "/cover.json");
    mark("cover");

    // -- looping -------------------------------------------------------------------
    LoopOptions lopts;
    lopts.threads = sc.threads;
    const LoopingReport loops = classify_looping(cover, sc.t0, sc.T0, lopts);
    write_file(out_dir + "/loops.csv", looping_report_csv(loops, rep.scenario_hash));
    rep.artifacts.push_back(out_dir + "/loops.csv");
    mark("loops");

    // -- partition -------------------------------------------------------------------
    CoverPartition part;
    LadderResult ladder;
    if (sc.partition_kind == "ladder") {
        ladder = dyadic_ladder(cover, loops, sc.t0, sc.T0, LadderOptions{0.2, lopts});
        part = ladder.partition;
    } else {
        part = partition_single_window(cover, loops, sc.t0, sc.T0, lopts);
    }
    {
        // stability of every rung under a from-scratch double-density re-test
        bool stable = true;
        std::string detail;
        for (std::size_t l = 0; l < part.rungs.size(); ++l) {
            const auto off = union_looping_offenders(cover, part.rungs[l].tubes,
                                                     part.rungs[l].t, part.rungs[l].T, 2.0,
                                                     lopts);
            if (!off.empty()) {
                stable = false;
                detail += "rung " + std::to_string(l) + ": " + std::to_string(off.size()) +
                          " offenders; ";
            }
        }
        check("partition.union_nonlooping_double_density", stable, detail);
    }
    {
        CsvBuilder csv("partition; scenario=" + rep.scenario_hash);
        csv.header({"tube_id", "set", "t", "T"});
        for (std::size_t b : part.bad) {
            csv.row_start();
            csv.cell(b);
            csv.cell(std::string("B"));
            csv.cell(std::string());
            csv.cell(std::string());
            csv.row_end();
        }
        for (std::size_t l = 0; l < part.rungs.size(); ++l)
            for (std::size_t g : part.rungs[l].tubes) {
                csv.row_start();
                csv.cell(g);
                csv.cell("G" + std::to_string(l));
                csv.cell(part.rungs[l].t);
                csv.cell(part.rungs[l].T);
                csv.row_end();
            }
        write_file(out_dir + "/partition.csv", csv.str());
        rep.artifacts.push_back(out_dir + "/partition.csv");
    }
    mark("partition");

    // -- bound sweep -------------------------------------------------------------------
    if (!sc.h_grid.empty()) {
        ConstantsLedger ledger = ConstantsLedger::defaults();
        ledger.set("Lambda_hat", lambda_hat, Provenance::empirical_fit);
        if (!is_cat) ledger.set("i_H_hat", estimate_i_H(*H), Provenance::empirical_fit);
        BoundInputs in;
        in.n = dim_n;
        in.k = codim_k;
        in.tau = is_cat ? 1.0 : sc.tau;
        in.D = cover.D;
        in.w_sup = sc.weight_sup;
        in.R = cover.r;
        const LadderCounts counts = counts_from_partition(part);
        CsvBuilder csv(
            "bound sweep; h dimensionless; bad/good decomposition of the average bound; scenario=" +
            rep.scenario_hash);
        csv.header({"h", "bad_term", "good_term", "bound", "classical", "logImproved",
                    "ratio_to_classical"});
        for (double h : sc.h_grid) {
            const auto est = evaluate_bound(counts, h, in, ledger);
            csv.row_start();
            csv.cell(est.h);
            csv.cell(est.bad_term);
            csv.cell(est.good_term);
            csv.cell(est.bound);
            csv.cell(est.classical);
            csv.cell(est.log_improved);
            csv.cell(est.bound / est.classical);
            csv.row_end();
        }
        write_file(out_dir + "/bound.csv", csv.str());
        rep.artifacts.push_back(out_dir + "/bound.csv");
        // toolchain-neutral plot script for the sweep
        std::string gp;
        gp += "set datafile separator ','\n";
        gp += "set logscale x\n";
        gp += "set xlabel 'h'\n";
        gp += "set ylabel 'bound'\n";
        gp += "plot 'bound.csv' using 1:4 with linespoints title 'bound', \\\n";
        gp += "     'bound.csv' using 1:5 with lines title 'classical', \\\n";
        gp += "     'bound.csv' using 1:6 with lines title 'log-improved'\n";
        write_file(out_dir + "/bound.gp", gp);
        rep.artifacts.push_back(out_dir + "/bound.gp");
        // constants used by the evaluation, with provenance
        nlohmann::json jl;
        for (const auto& [name, entry] : ledger.entries()) {
            const char* prov = entry.provenance == Provenance::empirical_fit
                                   ? "empirical-fit"
                                   : (entry.provenance == Provenance::config
                                          ? "config"
                                          : "existential");
            jl[name] = {{"value", entry.value}, {"provenance", prov}};
        }
        write_file(out_dir + "/constants.json", jl.dump(2) + "\n");
        rep.artifacts.push_back(out_dir + "/constants.json");
    }
    mark("bound");

    // -- eigen comparison ---------------------------------------------------------------
    if (!sc.eigen_kind.empty()) {
        CsvBuilder csv("eigen records; scenario=" + rep.scenario_hash);
        csv.header({"lambda", "h", "value", "baseline_classical", "baseline_logimproved"});
        if (sc.eigen_kind == "zonal_sweep") {
            auto sphere = std::dynamic_pointer_cast<const RoundSphere>(model);
            if (sphere == nullptr) throw ConfigError("zonal_sweep requires a sphere model");
            for (int ell : sc.eigen_ells) {
                const auto phi = sphere_zonal(sphere, ell);
                Vec pole(3);
                pole << 0, 0, 1;
                const double value = std::abs(phi.eval(pole));
                csv.row_start();
                csv.cell(phi.lambda);
                csv.cell(1.0 / phi.lambda);
                csv.cell(value);
                csv.cell(baseline(phi.lambda, dim_n, "classical"));
                csv.cell(baseline(phi.lambda, dim_n, "logImproved"));
                csv.row_end();
            }
        } else {
            throw ConfigError("unknown eigen comparison kind: " + sc.eigen_kind);
        }
        write_file(out_dir + "/eigen.csv", csv.str());
        rep.artifacts.push_back(out_dir + "/eigen.csv");
    }
    mark("eigen");

    write_file(out_dir + "/report.json", rep.to_json());
    rep.artifacts.push_back(out_dir + "/report.json");
    return rep;
}

// ---------------------------------------------------------------------------
// verify suites

namespace {

void expect(VerifyResult& vr, bool ok, const std::string& msg) {
    ++vr.checks;
    if (!ok) {
        ++vr.failures;
        vr.messages.push_back("FAIL: " + msg);
    }
}

VerifyResult verify_jacobi(std::uint64_t) {
    VerifyResult vr{"jacobi", 0, 0, {}};
    RoundSphere s2(2);
    Vec x(3), v(3);
    x << 1, 0, 0;
    v << 0, 1, 0;
    auto seg = propagate_linearization(s2, make_phase_point(s2, x, v), 3.2);
    expect(vr, seg.max_wronskian_drift() < 1e-6, "wronskian drift");
    expect(vr, seg.max_symplectic_drift() < 1e-6, "symplectic drift");
    for (double t : {0.5, 1.5, 2.5, 3.0}) {
        const auto st = seg.state_at_time(t);
        expect(vr, std::abs(st.A.determinant() - std::sin(t)) < 1e-6, "det A = sin t");
    }
    auto rep = conjugate_points(seg, 0.0, 3.2);
    expect(vr, rep.points.size() == 1 && std::abs(rep.points[0].first - M_PI) < 2e-3,
           "conjugate point at pi");
    return vr;
}

VerifyResult verify_riccati(std::uint64_t seed) {
    VerifyResult vr{"riccati", 0, 0, {}};
    Rng rng(seed);
    for (double k : {0.5, 1.0, 2.0}) {
        auto Rc = [&](double) { return Mat(-k * k * Mat::Identity(2, 2)); };
        auto rep = riccati_bound_check(Rc, 2, k, 0.0, 3.0);
        expect(vr, rep.pass && std::abs(rep.max_violation) < 1e-6,
               "saturation at k=" + format_double(k));
    }
    for (int trial = 0; trial < 12; ++trial) {
        const double k = 1.0;
        std::vector<double> breaks{0.2};
        while (breaks.back() < 3.0) breaks.push_back(breaks.back() + 0.3 + 0.5 * rng.uniform());
        auto Rpw = [&](double t) {
            std::size_t i = 0;
            while (i + 1 < breaks.size() && t >= breaks[i + 1]) ++i;
            const double v = (i * 2654435761u % 2 == 0) ? 0.0 : -k * k;
            return Mat(v * Mat::Identity(1, 1));
        };
        auto rep = riccati_bound_check(Rpw, 1, k, 0.2, 3.0);
        expect(vr, rep.pass, "piecewise trial");
    }
    return vr;
}

VerifyResult verify_cover_suite(std::uint64_t seed) {
    VerifyResult vr{"cover", 0, 0, {}};
    auto sphere = make_model("sphere2");
    Vec at(3);
    at << 1, 0, 0;
    auto H = std::make_shared<Submanifold>(Submanifold::point(sphere, at));
    auto beam = make_continuous_beam(sphere, H, 0.5, 0.2 * 0.1, 0.05);
    CoverOptions copts;
    copts.seed = seed;
    auto cover = build_good_cover(beam, 0.5, 0.1, copts);
    expect(vr, verify_coloring(cover), "coloring disjoint at 3r");
    Rng rng(seed);
    expect(vr, verify_cover_property(cover, 4000, rng) == 0, "MC cover property");
    auto loops = classify_looping(cover, 2.0, 7.0);
    auto part = partition_single_window(cover, loops, 2.0, 7.0);
    expect(vr, part.rungs.empty() || part.rungs[0].tubes.empty(),
           "sphere full recurrence: B = all");
    return vr;
}

VerifyResult verify_ladder(std::uint64_t) {
    VerifyResult vr{"ladder", 0, 0, {}};
    auto cat = std::make_shared<DiscreteHyperbolicSystem>();
    CatSegmentSpec spec;
    auto beam = make_cat_beam(cat, spec);
    CoverOptions copts;
    copts.verify = false;
    auto cover = build_good_cover(beam, 0.0, std::pow(2.0, -6), copts);
    auto loops = classify_looping(cover, 2.0, 256.0);
    auto lad = dyadic_ladder(cover, loops, 2.0, 256.0);
    expect(vr, !lad.rung_counts.empty(), "ladder produced rungs");
    std::size_t total = lad.partition.bad.size();
    for (auto c : lad.rung_counts) total += c;
    expect(vr, total == cover.size(), "ladder partitions all tubes");
    expect(vr, lad.partition.bad.size() <= cover.size() / 4, "bad set controlled");
    return vr;
}

VerifyResult verify_ift(std::uint64_t seed) {
    VerifyResult vr{"ift", 0, 0, {}};
    Rng rng(seed);
    {
        auto f = [](const Vec& x0, const Vec& x1, const Vec& x2) {
            Vec out(1);
            out << x0[0] - x1[0] * x2[0];
            return out;
        };
        IftBounds b;
        b.m = {1, 1, 1};
        b.B = {0.0, 0.0, 0.0};
        b.Btilde = {0.0, 1.0, 1.0};
        b.r_max = 1.0;
        auto res = quantitative_ift(f, b, 100, &rng);
        expect(vr, res.feasible && res.convergence_failures == 0, "bilinear test function");
        expect(vr, res.observed_ratio <= res.S + 0.02, "bilinear ratio <= S");
    }
    {
        auto f = [](const Vec& x0, const Vec&, const Vec&) { return x0; };
        IftBounds b;
        b.m = {2, 1, 1};
        b.B = {0.0, 0.0, 0.0};
        b.Btilde = {0.0, 0.0, 0.0};
        auto res = quantitative_ift(f, b, 50, &rng);
        expect(vr, res.feasible && res.convergence_failures == 0 && res.S == 0.0,
               "identity test function");
    }
    {
        auto f = [](const Vec& x0, const Vec& x1, const Vec&) {
            Vec out(1);
            out << x0[0] - std::sin(x0[0]) * x1[0];
            return out;
        };
        IftBounds b;
        b.m = {1, 1, 1};
        b.B = {1.0, 1.0, 0.0};  // |d2 f| <= |x1| <= 1, |dx1 dx0 f| = |cos| <= 1
        b.Btilde = {0.0, 1.0, 0.0};
        b.r_max = 1.0;
        auto res = quantitative_ift(f, b, 100, &rng);
        expect(vr, res.feasible && res.convergence_failures == 0, "sine test function");
        expect(vr, res.observed_ratio <= res.S + 0.02, "sine ratio <= S");
    }
    return vr;
}

VerifyResult verify_eigen(std::uint64_t) {
    VerifyResult vr{"eigen", 0, 0, {}};
    auto sphere = std::make_shared<RoundSphere>(2);
    for (int ell : {2, 10, 41}) {
        auto phi = sphere_zonal(sphere, ell);
        Vec pole(3);
        pole << 0, 0, 1;
        expect(vr,
               std::abs(std::abs(phi.eval(pole)) -
                        std::sqrt((2.0 * ell + 1) / (4 * M_PI))) < 1e-10,
               "pole value ell=" + std::to_string(ell));
        Vec x(3);
        x << std::sin(1.1), 0, std::cos(1.1);
        expect(vr, laplacian_residual(phi, x) < 1e-6, "laplacian residual");
    }
    auto torus = std::make_shared<FlatTorus>(2);
    Eigen::VectorXi m(2);
    m << 3, 4;
    auto phit = torus_eigenfunction(torus, m);
    expect(vr, std::abs(phit.lambda - 5.0) < 1e-14, "pythagorean frequency");
    Vec xt(2);
    xt << 0.7, 1.3;
    expect(vr, laplacian_residual(phit, xt) < 1e-6, "torus residual");
    // exact identity behind the residual: lambda^2 equals |m|^2
    expect(vr, std::abs(phit.lambda * phit.lambda - m.squaredNorm()) < 1e-12,
           "exact frequency identity");
    return vr;
}

}  // namespace

VerifyResult verify(const std::string& suite, std::uint64_t seed) {
    if (suite == "jacobi") return verify_jacobi(seed);
    if (suite == "riccati") return verify_riccati(seed);
    if (suite == "cover") return verify_cover_suite(seed);
    if (suite == "ladder") return verify_ladder(seed);
    if (suite == "ift") return verify_ift(seed);
    if (suite == "eigen") return verify_eigen(seed);
    throw ConfigError("verify: unknown suite '" + suite +
                      "' (expected jacobi|riccati|cover|ladder|ift|eigen)");
}

}  // namespace geobeam
