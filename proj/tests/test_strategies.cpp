#include <doctest.h>

#include <algorithm>
#include <set>

#include "translasso/rng.hpp"
#include "translasso/strategies.hpp"
#include "translasso/synthetic.hpp"

using namespace translasso;

namespace {

const ProblemGeometry kGeometry(0.10, {0.09, 0.09}, {0.2, 0.8}, {0.1, 0.1});

SolveOptions fast_solve()
{
    SolveOptions o;
    o.tolerance = 1e-9;
    o.expectation.hermite_nodes = 30;
    o.expectation.legendre_nodes = 16;
    return o;
}

SearchGrids coarse_grids()
{
    auto g = SearchGrids::defaults();
    g.kappa = {0.0, 0.5, 1.0, 1.5};
    g.dlambda_ratio = {0.0, 0.5, 1.0};
    g.pretraining_s = {0.0, 0.5, 1.0};
    g.max_cycles = 3;
    return g;
}

const TuningResult& find(const std::vector<TuningResult>& results, StrategyKind kind)
{
    return *std::find_if(results.begin(), results.end(), [&](const TuningResult& r) { return r.kind == kind; });
}

/// Rows of one class: y = A x + noise with a sparse x shared in part with the other classes.
struct ToyData
{
    std::vector<Matrix> designs;
    std::vector<Vector> responses;

    std::vector<DatasetView> views() const
    {
        std::vector<DatasetView> v;
        for (std::size_t k = 0; k < designs.size(); ++k) v.push_back({view_of(designs[k]), &responses[k]});
        return v;
    }
};

ToyData toy_data(std::uint64_t seed)
{
    const auto inst = generate_instance(kGeometry, 150, seed);
    ToyData d;
    for (std::size_t k = 1; k <= inst.num_classes(); ++k) {
        d.designs.push_back(inst.design(k));
        d.responses.push_back(inst.responses[k - 1]);
    }
    return d;
}

} // namespace

TEST_CASE("strategy names round-trip")
{
    for (auto k : all_strategies()) CHECK(strategy_from_string(to_string(k)) == k);
    CHECK_THROWS_AS(strategy_from_string("bogus"), std::invalid_argument);
}

TEST_CASE("search grid validation")
{
    CHECK_NOTHROW(SearchGrids::defaults().validate());
    auto g = SearchGrids::defaults();
    g.kappa.clear();
    CHECK_THROWS_AS(g.validate(), std::invalid_argument);
    g = SearchGrids::defaults();
    g.pretraining_s = {1.5};
    CHECK_THROWS_AS(g.validate(), std::invalid_argument);
    g = SearchGrids::defaults();
    g.lambda_min = 0.0;
    CHECK_THROWS_AS(g.validate(), std::invalid_argument);
    g = SearchGrids::defaults().with_log_dlambda(5, 0.1, 1.0);
    CHECK(g.dlambda_ratio.size() == 6);
    CHECK(g.dlambda_ratio.front() == 0.0);
    CHECK(g.dlambda_ratio.back() == doctest::Approx(1.0));
}

TEST_CASE("pretraining path endpoints")
{
    const auto [k0, d0] = pretraining_path(1.0, 0.2);
    CHECK(k0 == 0.0);
    CHECK(d0 == 0.0);
    const auto [k1, d1] = pretraining_path(0.5, 0.2);
    CHECK(k1 == 0.5);
    CHECK(d1 == doctest::Approx(0.2));
    const auto [k2, d2] = pretraining_path(0.0, 0.2);
    CHECK(k2 == 1.0);
    CHECK(is_hard_constraint(d2));
}

TEST_CASE("first-stage optimum degrades with noise")
{
    const auto grids = SearchGrids::defaults();
    double prev_eps = 0.0, prev_lambda = 0.0;
    for (double sigma : {0.1, 0.5, 1.0}) {
        const auto r = tune_lambda1(kGeometry.with_sigma({sigma, sigma}), grids, fast_solve());
        CAPTURE(sigma);
        CHECK(r.eps1 > prev_eps);
        CHECK(r.lambda1 > prev_lambda);
        for (const auto& [l, e] : r.trace) CHECK(r.eps1 <= e + 1e-12);
        prev_eps = r.eps1;
        prev_lambda = r.lambda1;
    }
}

TEST_CASE("optimal first-stage error per sample decreases with more data")
{
    const auto grids = SearchGrids::defaults();
    double prev = 1e300;
    for (double scale : {0.5, 1.0, 2.0}) {
        const auto g = kGeometry.with_alpha({0.2 * scale, 0.8 * scale});
        const auto r = tune_lambda1(g, grids, fast_solve());
        const double per_sample = r.eps1 / g.alpha_total();
        CAPTURE(scale);
        CHECK(per_sample < prev);
        prev = per_sample;
    }
}

TEST_CASE("without signal the first-stage penalty runs to the top of the bracket")
{
    const ProblemGeometry empty(0.0, {0.0, 0.0}, {0.2, 0.8}, {0.3, 0.3});
    const auto grids = SearchGrids::defaults();
    const auto r = tune_lambda1(empty, grids, fast_solve());
    CHECK(r.lambda1 == doctest::Approx(grids.lambda_max).epsilon(1e-3));
    CHECK(r.eps1 == doctest::Approx(0.2 * 0.09 + 0.8 * 0.09).epsilon(1e-9));
}

TEST_CASE("nested strategies never do worse than the strategies they contain")
{
    ReplicaObjective objective(kGeometry, fast_solve());
    const auto grids = coarse_grids();
    const double lambda1 = tune_lambda1(kGeometry, grids, fast_solve()).lambda1;
    const auto results = tune_strategies(objective, all_strategies(), lambda1, grids);
    REQUIRE(results.size() == all_strategies().size());
    const double k0 = find(results, StrategyKind::kappa_zero).objective;
    const double d0 = find(results, StrategyKind::dlambda_zero).objective;
    const double lo = find(results, StrategyKind::locally_optimal).objective;
    const double go = find(results, StrategyKind::globally_optimal).objective;
    const double tr = find(results, StrategyKind::trans_lasso).objective;
    CHECK(d0 <= tr);
    CHECK(lo <= k0);
    CHECK(lo <= d0);
    CHECK(go <= lo);

    const auto& trans = find(results, StrategyKind::trans_lasso);
    CHECK(trans.chosen.kappa == 1.0);
    CHECK(trans.chosen.dlambda == 0.0);
    CHECK(trans.chosen.lambda1 == lambda1);
    CHECK(find(results, StrategyKind::kappa_zero).chosen.kappa == 0.0);
    CHECK(find(results, StrategyKind::dlambda_zero).chosen.dlambda == 0.0);
    for (const auto& r : results) {
        CHECK(r.objective == doctest::Approx(objective.value(r.chosen)));
        if (r.kind != StrategyKind::globally_optimal) CHECK(r.chosen.lambda1 == lambda1);
        for (const auto& p : r.trace)
            if (!p.skipped) CHECK(r.objective <= p.objective);
    }
}

TEST_CASE("strategy tuning is deterministic")
{
    const auto grids = coarse_grids();
    const StrategyKind kinds[] = {StrategyKind::dlambda_zero, StrategyKind::pretraining_path};
    std::vector<TuningResult> runs[2];
    for (auto& run : runs) {
        ReplicaObjective objective(kGeometry, fast_solve());
        run = tune_strategies(objective, kinds, 0.1, grids);
    }
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(runs[0][i].chosen == runs[1][i].chosen);
        CHECK(runs[0][i].objective == runs[1][i].objective);
        CHECK(runs[0][i].trace.size() == runs[1][i].trace.size());
    }
}

TEST_CASE("lambda2 search brackets the optimum")
{
    ReplicaObjective objective(kGeometry, fast_solve());
    const auto grids = SearchGrids::defaults();
    const auto best = tune_lambda2(objective, {0.1, 1.0, 1.0, 0.0}, grids);
    CHECK(best.hyper.lambda1 == 0.1);
    CHECK(best.hyper.kappa == 1.0);
    for (double f : {0.9, 1.1})
        CHECK(best.objective <= objective.value({0.1, best.hyper.lambda2 * f, 1.0, 0.0}) + 1e-12);
}

TEST_CASE("fold assignment is balanced and deterministic")
{
    const auto a = assign_folds(103, 10, 5, 1);
    CHECK(a == assign_folds(103, 10, 5, 1));
    CHECK(a != assign_folds(103, 10, 6, 1));
    std::vector<int> counts(10, 0);
    for (int f : a) {
        REQUIRE(f >= 0);
        REQUIRE(f < 10);
        ++counts[static_cast<std::size_t>(f)];
    }
    CHECK(*std::max_element(counts.begin(), counts.end()) - *std::min_element(counts.begin(), counts.end()) <= 1);
    CHECK_THROWS_AS(assign_folds(5, 10, 0, 0), std::invalid_argument);
}

TEST_CASE("held-out sets partition every class")
{
    const auto data = toy_data(3);
    const auto views = data.views();
    CvOptions cv;
    cv.folds = 5;
    CvObjective objective(views, cv);
    for (std::size_t k = 0; k < views.size(); ++k) {
        std::set<Eigen::Index> rows;
        for (int f = 0; f < objective.folds(); ++f)
            for (auto i : objective.held_out(k, f)) CHECK(rows.insert(i).second);
        CHECK(static_cast<Eigen::Index>(rows.size()) == views[k].design.rows());
    }
}

TEST_CASE("permuting rows within a fold leaves the CV objective unchanged")
{
    auto data = toy_data(8);
    CvOptions cv;
    cv.folds = 4;
    cv.solver.tolerance = 1e-12;
    const Hyperparams h{0.05, 0.05, 0.8, 0.02};
    double before = 0.0, stage1_before = 0.0;
    std::vector<std::vector<Eigen::Index>> folds_of_class;
    {
        const auto views = data.views();
        CvObjective objective(views, cv);
        before = objective.value(h);
        stage1_before = objective.stage1_cv_error(h.lambda1);
        for (std::size_t k = 0; k < views.size(); ++k) {
            // reverse the held-out rows of fold 0 of class k among themselves
            const auto rows = objective.held_out(k, 0);
            Matrix A = data.designs[k];
            Vector y = data.responses[k];
            for (std::size_t i = 0; i < rows.size(); ++i) {
                A.row(rows[i]) = data.designs[k].row(rows[rows.size() - 1 - i]);
                y[rows[i]] = data.responses[k][rows[rows.size() - 1 - i]];
            }
            data.designs[k] = A;
            data.responses[k] = y;
        }
    }
    const auto views = data.views();
    CvObjective objective(views, cv);
    CHECK(objective.value(h) == doctest::Approx(before).epsilon(1e-7));
    CHECK(objective.stage1_cv_error(h.lambda1) == doctest::Approx(stage1_before).epsilon(1e-7));
}

TEST_CASE("cross-validated lambda2 is near the replica optimum")
{
    const std::size_t n = 600;
    const auto inst = generate_instance(kGeometry, n, 31);
    CvOptions cv;
    cv.folds = 5;
    const auto grids = SearchGrids::defaults();
    const auto tuned = cv_tune(inst.datasets(), StrategyKind::trans_lasso, cv, grids);

    ReplicaObjective objective(kGeometry, fast_solve());
    const double lambda1 = tune_lambda1(kGeometry, grids, fast_solve()).lambda1;
    const auto best = tune_stage2(objective, StrategyKind::trans_lasso, lambda1, grids);
    // The replica error at the CV choice is within 15% of the replica optimum.
    CHECK(objective.value(tuned.chosen) <= 1.15 * best.objective);
}
