#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "translasso/lasso.hpp"
#include "translasso/rng.hpp"

using namespace translasso;

namespace {

struct RandomProblem
{
    Matrix A;
    Vector y;
    Vector offset;
    Vector penalties;
};

RandomProblem random_problem(std::uint64_t seed, bool with_offset, bool with_hard)
{
    auto rng = make_stream(seed, 99);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_int_distribution<int> rows(10, 60), cols(5, 80);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int m = rows(rng), n = cols(rng);
    RandomProblem p;
    p.A = Matrix(m, n);
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = 0; i < m; ++i) p.A(i, j) = g(rng) / std::sqrt(static_cast<double>(n));
    Vector x = Vector::Zero(n);
    for (Eigen::Index j = 0; j < n; ++j)
        if (u(rng) < 0.2) x[j] = g(rng);
    p.y = p.A * x;
    for (auto& v : p.y) v += 0.1 * g(rng);
    if (with_offset) {
        p.offset = Vector(m);
        for (auto& v : p.offset) v = 0.3 * g(rng);
    }
    p.penalties = Vector(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        p.penalties[j] = 0.01 + 0.2 * u(rng);
        if (with_hard && u(rng) < 0.15) p.penalties[j] = kHardConstraint;
    }
    return p;
}

WeightedLassoProblem as_problem(const RandomProblem& r)
{
    WeightedLassoProblem p;
    p.design = StackedDesign(view_of(r.A));
    p.response = r.y;
    p.offset = r.offset;
    p.penalties = r.penalties;
    return p;
}

} // namespace

TEST_CASE("weighted lasso meets KKT certificates on 100 random problems")
{
    for (std::uint64_t s = 0; s < 100; ++s) {
        const auto r = random_problem(s, s % 2 == 0, s % 3 == 0);
        const auto problem = as_problem(r);
        SolverOptions opts;
        opts.tolerance = 1e-10;
        const auto fit = fit_weighted_lasso(problem, opts);
        CAPTURE(s);
        CHECK(kkt_violation(problem, fit.estimate.coefficients) <= 1e-8);
        for (Eigen::Index j = 0; j < r.penalties.size(); ++j)
            if (is_hard_constraint(r.penalties[j])) CHECK(fit.estimate.coefficients[j] == 0.0);
    }
}

TEST_CASE("weighted lasso agrees with an accelerated proximal-gradient reference")
{
    for (std::uint64_t s = 200; s < 220; ++s) {
        const auto r = random_problem(s, true, true);
        const auto problem = as_problem(r);
        SolverOptions opts;
        opts.tolerance = 1e-12;
        const auto fit = fit_weighted_lasso(problem, opts);
        const Vector ref = oracle::fista(r.A, r.y - r.offset, r.penalties, 50000);
        const double obj_ref = lasso_objective(problem, ref);
        CAPTURE(s);
        CHECK(fit.objective <= obj_ref + 1e-9);
        CHECK((fit.estimate.coefficients - ref).lpNorm<Eigen::Infinity>() < 1e-5);
    }
}

TEST_CASE("objective trace is non-increasing")
{
    const auto r = random_problem(7, false, false);
    SolverOptions opts;
    opts.anderson_memory = 0;
    const auto fit = fit_weighted_lasso(as_problem(r), opts, nullptr, true);
    REQUIRE(fit.objective_trace.size() > 1);
    for (std::size_t i = 1; i < fit.objective_trace.size(); ++i)
        CHECK(fit.objective_trace[i] <= fit.objective_trace[i - 1] + 1e-12);
}

TEST_CASE("penalty above the dual norm gives the zero solution")
{
    const auto r = random_problem(11, false, false);
    auto problem = as_problem(r);
    const double dual = (r.A.transpose() * r.y).lpNorm<Eigen::Infinity>();
    problem.penalties = Vector::Constant(r.A.cols(), dual * 1.0001);
    const auto fit = fit_weighted_lasso(problem);
    CHECK(fit.estimate.coefficients.lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("warm start reaches the same solution")
{
    const auto r = random_problem(13, true, false);
    const auto problem = as_problem(r);
    SolverOptions opts;
    opts.tolerance = 1e-12;
    const auto cold = fit_weighted_lasso(problem, opts);
    Estimate warm{Vector::Constant(r.A.cols(), 0.5), Stage::first};
    const auto hot = fit_weighted_lasso(problem, opts, &warm);
    CHECK((cold.estimate.coefficients - hot.estimate.coefficients).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("non-convergence is reported with the last iterate")
{
    const auto r = random_problem(17, false, false);
    SolverOptions opts;
    opts.tolerance = 1e-14;
    opts.max_iters = 1;
    opts.anderson_memory = 0;
    CHECK_THROWS_AS(fit_weighted_lasso(as_problem(r), opts), NonConvergenceError);
}

TEST_CASE("pooled first stage equals a lasso on the stacked data")
{
    auto rng = make_stream(5, 1);
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix A1(30, 40), A2(50, 40);
    for (auto* A : {&A1, &A2})
        for (Eigen::Index j = 0; j < A->cols(); ++j)
            for (Eigen::Index i = 0; i < A->rows(); ++i) (*A)(i, j) = g(rng) / std::sqrt(40.0);
    Vector y1(30), y2(50);
    for (auto& v : y1) v = g(rng);
    for (auto& v : y2) v = g(rng);
    const DatasetView d[] = {{view_of(A1), &y1}, {view_of(A2), &y2}};
    SolverOptions opts;
    opts.tolerance = 1e-12;
    const auto fit = fit_pretraining(d, 0.1, opts);

    Matrix A(80, 40);
    A << A1, A2;
    Vector y(80);
    y << y1, y2;
    const Vector ref = oracle::fista(A, y, Vector::Constant(40, 0.1), 50000);
    CHECK((fit.estimate.coefficients - ref).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("second stage: penalties and offset follow the first-stage support")
{
    Estimate first{Vector(4), Stage::first};
    first.coefficients << 0.0, 1.5, 0.0, -2.0;
    const Vector p = finetune_penalties(first, 0.2, 0.3);
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p[1] == doctest::Approx(0.2));
    CHECK(p[3] == doctest::Approx(0.2));
    const Vector hard = finetune_penalties(first, 0.2, kHardConstraint);
    CHECK(is_hard_constraint(hard[0]));
    CHECK(hard[1] == doctest::Approx(0.2));

    auto rng = make_stream(9, 1);
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix A(25, 4);
    for (auto& v : A.reshaped()) v = g(rng) * 0.5;
    Vector y(25);
    for (auto& v : y) v = g(rng);
    const DatasetView target{view_of(A), &y};
    SolverOptions opts;
    opts.tolerance = 1e-12;
    const Hyperparams h{0.1, 0.2, 0.7, 0.3};
    const auto fit = fit_finetune(target, first, h, opts);
    const Vector ref = oracle::fista(A, y - 0.7 * A * first.coefficients, p, 50000);
    CHECK((fit.estimate.coefficients - ref).lpNorm<Eigen::Infinity>() < 1e-7);

    const auto pinned = fit_finetune(target, first, Hyperparams{0.1, 0.2, 0.7, kHardConstraint}, opts);
    CHECK(pinned.estimate.coefficients[0] == 0.0);
    CHECK(pinned.estimate.coefficients[2] == 0.0);
}
