#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "translasso/experiments.hpp"
#include "translasso/parallel.hpp"
#include "translasso/rng.hpp"

using namespace translasso;
namespace fs = std::filesystem;

namespace {

struct Outcome
{
    bool pass = false;
    std::string detail;
};

const std::array<std::array<double, 3>, 2> kPanels = {{{0.10, 0.09, 0.09}, {0.15, 0.04, 0.04}}};
const std::vector<double> kCurveKappa = {0.0, 1.0};
const std::vector<double> kCurveDlambda = {0.0, 0.02, 0.04, 0.06, 0.08, 0.1};
constexpr double kNestingTolerance = 1e-4;

ProblemGeometry panel_geometry(const std::array<double, 3>& pi, double alpha1, double sigma = 0.1)
{
    return ProblemGeometry(pi[0], {pi[1], pi[2]}, {alpha1, 0.8}, {sigma, sigma});
}

std::string fmt(const char* f, double a)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

/// Reduced node counts for the strategy searches (checked against the defaults in the unit suites).
SolveOptions search_options()
{
    SolveOptions o;
    o.tolerance = 1e-9;
    o.expectation.hermite_nodes = 30;
    o.expectation.legendre_nodes = 16;
    return o;
}

struct Context
{
    int workers = 0;
    std::uint64_t seed = 2024;
    fs::path cli;
    fs::path cli_configs;
    fs::path work_dir;
};

Outcome criterion1(const Context& ctx)
{
    int total = 0, within = 0;
    double worst = 0.0;
    std::string worst_at;
    for (const auto& pi : kPanels) {
        for (double alpha1 : {0.2, 0.6}) {
            ExperimentConfig c;
            c.seed = ctx.seed;
            c.geometry = panel_geometry(pi, alpha1);
            c.kappa_grid = kCurveKappa;
            c.dlambda_grid = kCurveDlambda;
            c.num_features = 4000;
            c.realizations = 32;
            c.test_sets = 0;
            const auto records = cmd_simulate(c, ctx.workers);
            for (const auto& r : records) {
                ++total;
                if (!r.replica || !r.empirical || r.empirical->realizations < 2) continue;
                const double se = r.empirical->eps2.std_error;
                const double z = std::abs(r.replica->eps2 - r.empirical->eps2.mean) / se;
                if (z <= 3.0) ++within;
                if (z > worst) {
                    worst = z;
                    worst_at = "pi0=" + fmt("%.2f", pi[0]) + " alpha1=" + fmt("%.1f", alpha1) +
                               " kappa=" + fmt("%.1f", r.hyper.kappa) + " dlambda=" + fmt("%.2f", r.hyper.dlambda);
                }
            }
        }
    }
    return {within == total, std::to_string(within) + "/" + std::to_string(total) +
                                 " points within 3 SE; largest |z| = " + fmt("%.2f", worst) + " at " + worst_at};
}

Outcome criterion2(const Context& ctx)
{
    ExperimentConfig c;
    c.seed = ctx.seed + 1;
    c.geometry = panel_geometry(kPanels[0], 0.2);
    c.kappa_grid = {1.0};
    c.dlambda_grid = {0.04};
    c.num_features = 8000;
    c.realizations = 16;
    c.test_sets = 0;
    const auto records = cmd_simulate(c, ctx.workers);
    if (records.size() != 1 || !records[0].replica || !records[0].empirical) return {false, "simulation failed"};
    const auto pred = order_params(records[0].replica->theta1, records[0].replica->theta2);
    const auto& e = *records[0].empirical;
    const std::vector<std::tuple<std::string, double, MeanWithError>> rows = {
        {"q1", pred.q1, e.q1}, {"q2", pred.q2, e.q2}, {"qr", pred.qr, e.qr},
        {"m1_0", pred.m1[0], e.m1[0]}, {"m2_0", pred.m2[0], e.m2[0]}};
    bool ok = true;
    std::string detail;
    for (const auto& [name, p, m] : rows) {
        const double z = std::abs(p - m.mean) / m.std_error;
        ok = ok && z <= 3.0;
        detail += name + " z=" + fmt("%.2f", z) + " ";
    }
    return {ok, detail + "(N=8000, 16 realizations)"};
}

Outcome criterion3()
{
    const auto grids = SearchGrids::defaults();
    const SolveOptions options;
    bool ok = true;
    std::string detail;
    for (const auto& pi : kPanels) {
        for (double alpha1 : {0.2, 0.6}) {
            const auto g = panel_geometry(pi, alpha1);
            const double lambda1 = tune_lambda1(g, grids, options).lambda1;
            ReplicaObjective objective(g, options);
            std::map<double, std::map<double, double>> eps;  // [dlambda][kappa]
            for (double dl : kCurveDlambda)
                for (double k : kCurveKappa) eps[dl][k] = tune_lambda2(objective, {lambda1, 1.0, k, dl}, grids).objective;
            const std::string tag = "pi0=" + fmt("%.2f", pi[0]) + " alpha1=" + fmt("%.1f", alpha1) + ": ";
            if (alpha1 == 0.2) {
                std::vector<double> tuned;
                for (const auto& [dl, row] : eps)
                    tuned.push_back(std::min_element(row.begin(), row.end(), [](auto& a, auto& b) {
                                        return a.second < b.second;
                                    })->second);
                const auto [lo, hi] = std::minmax_element(tuned.begin(), tuned.end());
                double mean = 0.0;
                for (double v : tuned) mean += v / static_cast<double>(tuned.size());
                const double spread = (*hi - *lo) / mean;
                ok = ok && spread <= 0.03;
                detail += tag + "spread " + fmt("%.2f", 100 * spread) + "%; ";
            } else {
                double best = 1e300, best_kappa = -1.0;
                for (const auto& [dl, row] : eps)
                    for (const auto& [k, v] : row)
                        if (v < best) {
                            best = v;
                            best_kappa = k;
                        }
                ok = ok && best_kappa == 0.0;
                detail += tag + "optimal kappa " + fmt("%.1f", best_kappa) + "; ";
            }
        }
    }
    return {ok, detail};
}

/// Replica strategy comparisons shared by criteria 4-7.
struct StrategyRuns
{
    struct Run
    {
        std::string label;
        std::map<StrategyKind, double> eps;
    };
    std::vector<Run> sigma01;  // criterion 5 grid
    std::vector<Run> sigma05;  // criterion 6 grid
    std::optional<Run> gap;    // criterion 7 point
};

const std::vector<double> kAlpha1 = {0.05, 0.15, 0.25, 0.35, 0.45};
const std::vector<double> kAlpha2 = {0.1, 0.3, 0.5, 0.7, 0.9};

StrategyRuns::Run compare_at(const ProblemGeometry& g, double sigma, std::span<const StrategyKind> kinds, int workers)
{
    const double sigmas[] = {sigma};
    const auto rows = strategy_compare(g, sigmas, kinds, SearchGrids::defaults(), search_options(), workers);
    StrategyRuns::Run run;
    run.label = "alpha=(" + fmt("%.2f", g.alpha()[0]) + "," + fmt("%.2f", g.alpha()[1]) + ") sigma=" + fmt("%g", sigma);
    for (const auto& r : rows) run.eps[r.kind] = r.eps2;
    return run;
}

std::vector<StrategyRuns::Run> compare_grid(double sigma, std::span<const StrategyKind> kinds, int workers)
{
    std::vector<ProblemGeometry> points;
    for (double a1 : kAlpha1)
        for (double a2 : kAlpha2) points.push_back(ProblemGeometry(0.10, {0.09, 0.09}, {a1, a2}, {sigma, sigma}));
    std::vector<StrategyRuns::Run> runs(points.size());
    parallel_for(points.size(), workers, [&](std::size_t i) { runs[i] = compare_at(points[i], sigma, kinds, 1); });
    return runs;
}

const std::vector<StrategyKind> kChainKinds = {StrategyKind::kappa_zero, StrategyKind::dlambda_zero,
                                               StrategyKind::locally_optimal, StrategyKind::globally_optimal,
                                               StrategyKind::trans_lasso};
const std::vector<StrategyKind> kHighNoiseKinds = {StrategyKind::kappa_zero, StrategyKind::dlambda_zero,
                                                   StrategyKind::locally_optimal, StrategyKind::trans_lasso};

StrategyRuns& strategy_runs(const Context& ctx, bool grid01, bool grid05, bool gap)
{
    static StrategyRuns runs;
    if (grid01 && runs.sigma01.empty()) runs.sigma01 = compare_grid(0.1, kChainKinds, ctx.workers);
    if (grid05 && runs.sigma05.empty()) runs.sigma05 = compare_grid(0.5, kHighNoiseKinds, ctx.workers);
    if (gap && !runs.gap) runs.gap = compare_at(ProblemGeometry(0.10, {0.09, 0.09}, {0.4, 0.8}, {0.01, 0.01}), 0.01,
                                                kChainKinds, ctx.workers);
    return runs;
}

bool leq(double a, double b)
{
    return a <= b * (1.0 + kNestingTolerance);
}

Outcome criterion4(const Context& ctx)
{
    auto& runs = strategy_runs(ctx, true, true, true);
    std::vector<const StrategyRuns::Run*> all;
    for (const auto& r : runs.sigma01) all.push_back(&r);
    for (const auto& r : runs.sigma05) all.push_back(&r);
    all.push_back(&*runs.gap);
    int checked = 0, violations = 0;
    std::string first;
    for (const auto* r : all) {
        const auto& e = r->eps;
        auto at = [&](StrategyKind k) { return e.at(k); };
        const double simple = std::min(at(StrategyKind::kappa_zero), at(StrategyKind::dlambda_zero));
        std::vector<std::pair<bool, const char*>> checks = {
            {leq(at(StrategyKind::locally_optimal), simple), "LO <= min(kappa0, dlambda0)"},
            {leq(simple, at(StrategyKind::dlambda_zero)), "min <= dlambda0"},
            {leq(at(StrategyKind::dlambda_zero), at(StrategyKind::trans_lasso)), "dlambda0 <= TransLasso"}};
        if (e.count(StrategyKind::globally_optimal))
            checks.push_back({leq(at(StrategyKind::globally_optimal), at(StrategyKind::locally_optimal)), "GO <= LO"});
        for (const auto& [ok, what] : checks) {
            ++checked;
            if (!ok && violations++ == 0) first = std::string(what) + " at " + r->label;
        }
    }
    return {violations == 0, std::to_string(checked) + " inequalities over " + std::to_string(all.size()) +
                                  " replica runs, " + std::to_string(violations) + " violated" +
                                  (first.empty() ? "" : " (first: " + first + ")")};
}

Outcome criterion5(const Context& ctx)
{
    const auto& runs = strategy_runs(ctx, true, false, false).sigma01;
    double worst = 0.0;
    std::string where;
    for (const auto& r : runs) {
        const double ratio = std::min(r.eps.at(StrategyKind::dlambda_zero), r.eps.at(StrategyKind::kappa_zero)) /
                             r.eps.at(StrategyKind::locally_optimal);
        if (ratio > worst) {
            worst = ratio;
            where = r.label;
        }
    }
    return {worst <= 1.10, "max ratio " + fmt("%.4f", worst) + " at " + where + " over " +
                               std::to_string(runs.size()) + " points"};
}

Outcome criterion6(const Context& ctx)
{
    const auto& runs = strategy_runs(ctx, false, true, false).sigma05;
    double worst = 0.0;
    std::string where;
    for (const auto& r : runs) {
        const double lo = r.eps.at(StrategyKind::locally_optimal);
        const double gap = (r.eps.at(StrategyKind::dlambda_zero) - lo) / lo;
        if (gap >= worst) {
            worst = gap;
            where = r.label;
        }
    }
    return {worst <= 1e-4, "max relative gap " + fmt("%.2e", worst) + " at " + where + " over " +
                               std::to_string(runs.size()) + " points"};
}

Outcome criterion7(const Context& ctx)
{
    const auto& run = *strategy_runs(ctx, false, false, true).gap;
    const double ratio = run.eps.at(StrategyKind::dlambda_zero) / run.eps.at(StrategyKind::trans_lasso);
    return {ratio <= 0.70, "eps(dlambda0) / eps(TransLasso) = " + fmt("%.4f", ratio) + " at " + run.label};
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Runs a CLI command twice into separate directories and compares every output file byte for byte.
std::string cli_twice(const Context& ctx, const std::string& command, const fs::path& config)
{
    std::vector<fs::path> outs;
    for (int i = 0; i < 2; ++i) {
        const fs::path out = ctx.work_dir / (command + "_" + std::to_string(i));
        fs::remove_all(out);
        const std::string cmd = "\"" + ctx.cli.string() + "\" " + command + " --config \"" + config.string() +
                                "\" --out \"" + out.string() + "\" --seed 7 --workers " + std::to_string(i + 1) +
                                " > \"" + (out.string() + ".log") + "\" 2>&1";
        if (std::system(cmd.c_str()) != 0) return command + ": exit status non-zero";
        outs.push_back(out);
    }
    std::set<std::string> names;
    for (const auto& e : fs::directory_iterator(outs[0])) names.insert(e.path().filename().string());
    std::set<std::string> names_b;
    for (const auto& e : fs::directory_iterator(outs[1])) names_b.insert(e.path().filename().string());
    if (names != names_b || names.empty()) return command + ": output file sets differ";
    for (const auto& n : names)
        if (slurp(outs[0] / n) != slurp(outs[1] / n)) return command + ": " + n + " differs between runs";
    return {};
}

/// Writes synthetic class tables plus a config and returns the config path.
fs::path synthetic_realdata(const Context& ctx)
{
    const fs::path dir = ctx.work_dir / "realdata_input";
    fs::create_directories(dir);
    const ProblemGeometry g(0.1, {0.09, 0.09}, {0.6, 1.2}, {0.2, 0.2});
    const std::size_t n = 60;
    const auto inst = generate_instance(g, n, 41);
    std::vector<std::string> names;
    for (std::size_t j = 0; j < n; ++j) names.push_back("x" + std::to_string(j + 1));
    write_table(dir / "target_train.csv", names, inst.design(1), inst.responses[0]);
    write_table(dir / "source_train.csv", names, inst.design(2), inst.responses[1]);
    auto rng = make_stream(42, 0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix A(60, static_cast<Eigen::Index>(n));
    for (auto& v : A.reshaped()) v = gauss(rng) / std::sqrt(static_cast<double>(n));
    Vector y = A * inst.truth.class_target(1);
    for (auto& v : y) v += 0.2 * gauss(rng);
    write_table(dir / "target_test.csv", names, A, y);
    std::ofstream(dir / "config.yaml") << "realdata:\n"
                                          "  classes:\n"
                                          "    - {name: target, train: target_train.csv, test: target_test.csv}\n"
                                          "    - {name: source, train: source_train.csv}\n"
                                          "  target: target\n"
                                          "  strategy: dlambda_zero\n"
                                          "  folds: 5\n";
    return dir / "config.yaml";
}

Outcome criterion8(const Context& ctx)
{
    doctest::Context suites;
    suites.setOption("no-intro", true);
    suites.setOption("no-version", true);
    suites.setOption("minimal", true);
    const int failed = suites.run();
    std::string detail = failed == 0 ? "property suites passed" : "property suites FAILED";

    std::vector<std::string> problems;
    fs::create_directories(ctx.work_dir);
    for (const auto& [command, file] : std::vector<std::pair<std::string, std::string>>{
             {"replica-solve", "replica_solve.yaml"},
             {"sweep", "sweep.yaml"},
             {"simulate", "simulate.yaml"},
             {"strategies", "strategies.yaml"}}) {
        const auto p = cli_twice(ctx, command, ctx.cli_configs / file);
        if (!p.empty()) problems.push_back(p);
    }
    const auto realdata = cli_twice(ctx, "realdata", synthetic_realdata(ctx));
    if (!realdata.empty()) problems.push_back(realdata);
    else {
        const auto report = slurp(ctx.work_dir / "realdata_0" / "report.json");
        if (report.find("\"test_mse\"") == std::string::npos) problems.push_back("realdata: report lacks test_mse");
    }
    detail += problems.empty() ? "; 5 CLI commands deterministic; synthetic CSV run complete"
                               : "; CLI: " + problems.front();
    return {failed == 0 && problems.empty(), detail};
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app("Acceptance criteria 1-8");
    Context ctx;
    std::vector<int> selected;
    ctx.cli = TRANSLASSO_CLI_PATH;
    ctx.cli_configs = TRANSLASSO_CLI_CONFIGS;
    ctx.work_dir = fs::temp_directory_path() / "translasso_acceptance";
    app.add_option("--criteria", selected, "criteria to run (default: all)")->check(CLI::Range(1, 8));
    app.add_option("--workers", ctx.workers, "worker threads (0 = all cores)");
    app.add_option("--seed", ctx.seed, "root seed of the simulations");
    app.add_option("--cli", ctx.cli, "path of the translasso executable");
    app.add_option("--work-dir", ctx.work_dir, "scratch directory");
    CLI11_PARSE(app, argc, argv);
    if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8};

    const std::map<int, std::function<Outcome()>> criteria = {
        {1, [&] { return criterion1(ctx); }}, {2, [&] { return criterion2(ctx); }},
        {3, [] { return criterion3(); }},     {4, [&] { return criterion4(ctx); }},
        {5, [&] { return criterion5(ctx); }}, {6, [&] { return criterion6(ctx); }},
        {7, [&] { return criterion7(ctx); }}, {8, [&] { return criterion8(ctx); }}};

    bool all = true;
    for (int id : selected) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria.at(id)();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << " | " << o.detail << " ["
                  << fmt("%.0f", secs) << " s]" << std::endl;
        all = all && o.pass;
    }
    return all ? 0 : 1;
}
