#include "translasso/lasso.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace translasso {

void StackedDesign::add(MatrixView block)
{
    if (!blocks_.empty() && block.cols() != cols_)
        throw std::invalid_argument("stacked design: all blocks must share the column count");
    cols_ = block.cols();
    offsets_.push_back(rows_);
    rows_ += block.rows();
    blocks_.push_back(block);
}

void StackedDesign::multiply(const Vector& x, Vector& out) const
{
    out.resize(rows_);
    for (std::size_t b = 0; b < blocks_.size(); ++b)
        out.segment(offsets_[b], blocks_[b].rows()).noalias() = blocks_[b] * x;
}

void StackedDesign::multiply_transpose(const Vector& r, Vector& out) const
{
    out.setZero(cols_);
    for (std::size_t b = 0; b < blocks_.size(); ++b)
        out.noalias() += blocks_[b].transpose() * r.segment(offsets_[b], blocks_[b].rows());
}

double StackedDesign::column_dot(Eigen::Index j, const Vector& r) const
{
    double s = 0.0;
    for (std::size_t b = 0; b < blocks_.size(); ++b)
        s += blocks_[b].col(j).dot(r.segment(offsets_[b], blocks_[b].rows()));
    return s;
}

void StackedDesign::column_axpy(Eigen::Index j, double scale, Vector& r) const
{
    for (std::size_t b = 0; b < blocks_.size(); ++b)
        r.segment(offsets_[b], blocks_[b].rows()).noalias() += scale * blocks_[b].col(j);
}

Vector StackedDesign::column_squared_norms() const
{
    Vector d = Vector::Zero(cols_);
    for (const auto& block : blocks_) d += block.colwise().squaredNorm().transpose();
    return d;
}

void WeightedLassoProblem::validate() const
{
    if (response.size() != design.rows())
        throw std::invalid_argument("weighted lasso: response length does not match design rows");
    if (offset.size() != 0 && offset.size() != design.rows())
        throw std::invalid_argument("weighted lasso: offset length does not match design rows");
    if (penalties.size() != design.cols())
        throw std::invalid_argument("weighted lasso: one penalty per column is required");
    for (Eigen::Index i = 0; i < penalties.size(); ++i)
        if (!(penalties[i] >= 0.0))
            throw std::invalid_argument("weighted lasso: penalties must be non-negative");
}

Vector WeightedLassoProblem::target() const
{
    if (offset.size() == 0) return response;
    return response - offset;
}

namespace {

double penalty_term(const Vector& penalties, const Vector& x)
{
    double s = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i)
        if (x[i] != 0.0) s += penalties[i] * std::abs(x[i]);
    return s;
}

// Violation of coordinate i given c_i = A_i^T r.
double coordinate_violation(double c, double x, double w)
{
    if (x != 0.0) {
        if (is_hard_constraint(w)) return std::numeric_limits<double>::infinity();
        return std::abs(c - w * (x > 0.0 ? 1.0 : -1.0));
    }
    if (is_hard_constraint(w)) return 0.0;
    return std::max(0.0, std::abs(c) - w);
}

// Anderson step: combine the stored iterates with weights minimizing the norm of
// their successive differences; adopt it only when the objective decreases.
void try_extrapolation(const StackedDesign& A, const Vector& b, const Vector& w,
                       const std::vector<Eigen::Index>& active, const Matrix& history, Vector& x, Vector& r)
{
    const Eigen::Index m = history.cols() - 1;
    const Matrix U = history.rightCols(m) - history.leftCols(m);
    const Matrix gram = U.transpose() * U;
    const Vector ones = Vector::Ones(m);
    const Vector z = gram.ldlt().solve(ones);
    const double total = z.sum();
    if (!std::isfinite(total) || total == 0.0 || !z.allFinite()) return;
    const Vector coef = z / total;
    const Vector extrapolated = history.rightCols(m) * coef;

    Vector candidate = x;
    for (std::size_t a = 0; a < active.size(); ++a) candidate[active[a]] = extrapolated[static_cast<Eigen::Index>(a)];
    Vector cand_r = b;
    for (Eigen::Index j : active)
        if (candidate[j] != 0.0) A.column_axpy(j, -candidate[j], cand_r);
    const double current = 0.5 * r.squaredNorm() + penalty_term(w, x);
    const double proposed = 0.5 * cand_r.squaredNorm() + penalty_term(w, candidate);
    if (proposed < current) {
        x = std::move(candidate);
        r = std::move(cand_r);
    }
}

} // namespace

double lasso_objective(const WeightedLassoProblem& problem, const Vector& x)
{
    Vector r;
    problem.design.multiply(x, r);
    r = problem.target() - r;
    return 0.5 * r.squaredNorm() + penalty_term(problem.penalties, x);
}

double kkt_violation(const WeightedLassoProblem& problem, const Vector& x)
{
    Vector r;
    problem.design.multiply(x, r);
    r = problem.target() - r;
    Vector c;
    problem.design.multiply_transpose(r, c);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i)
        worst = std::max(worst, coordinate_violation(c[i], x[i], problem.penalties[i]));
    return worst;
}

LassoFit fit_weighted_lasso(const WeightedLassoProblem& problem, const SolverOptions& options,
                            const Estimate* warm_start, bool record_objective)
{
    problem.validate();
    if (!(options.tolerance > 0.0)) throw std::invalid_argument("solver options: tolerance must be positive");
    if (options.max_iters < 1) throw std::invalid_argument("solver options: max_iters must be positive");

    const auto& A = problem.design;
    const auto& w = problem.penalties;
    const Eigen::Index n = A.cols();
    const Vector b = problem.target();
    const Vector d = A.column_squared_norms();

    Vector x = Vector::Zero(n);
    if (warm_start) {
        if (warm_start->coefficients.size() != n)
            throw std::invalid_argument("weighted lasso: warm start has the wrong dimension");
        x = warm_start->coefficients;
        for (Eigen::Index i = 0; i < n; ++i)
            if (is_hard_constraint(w[i]) || d[i] == 0.0) x[i] = 0.0;
    }

    // Columns that can never move: pinned by the penalty or identically zero.
    std::vector<char> frozen(static_cast<std::size_t>(n), 0);
    for (Eigen::Index i = 0; i < n; ++i) frozen[static_cast<std::size_t>(i)] = is_hard_constraint(w[i]) || d[i] == 0.0;

    Vector r;
    A.multiply(x, r);
    r = b - r;
    Vector c;

    std::vector<char> in_active(static_cast<std::size_t>(n), 0);
    std::vector<Eigen::Index> active;
    auto activate = [&](Eigen::Index i) {
        auto& flag = in_active[static_cast<std::size_t>(i)];
        if (!flag && !frozen[static_cast<std::size_t>(i)]) {
            flag = 1;
            active.push_back(i);
        }
    };
    if (options.screening) {
        for (Eigen::Index i = 0; i < n; ++i)
            if (x[i] != 0.0) activate(i);
    } else {
        for (Eigen::Index i = 0; i < n; ++i) activate(i);
    }

    LassoFit fit;
    fit.estimate.stage = Stage::first;
    const double inner_tol = 0.25 * options.tolerance;
    double residual = std::numeric_limits<double>::infinity();

    while (true) {
        // Certify on a freshly computed residual.
        A.multiply(x, r);
        r = b - r;
        A.multiply_transpose(r, c);
        residual = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double v = frozen[static_cast<std::size_t>(i)] ? 0.0 : coordinate_violation(c[i], x[i], w[i]);
            residual = std::max(residual, v);
            if (v > options.tolerance && !in_active[static_cast<std::size_t>(i)]) {
                activate(i);
            }
        }
        if (residual <= options.tolerance) break;
        if (fit.sweeps >= options.max_iters) {
            fit.estimate.coefficients = x;
            throw NonConvergenceError("weighted lasso did not converge within max_iters (KKT residual " +
                                          std::to_string(residual) + ")",
                                      residual, fit.estimate);
        }
        std::sort(active.begin(), active.end());

        // Cyclic coordinate descent restricted to the active set, with Anderson
        // extrapolation over the last few sweeps (kept only if it lowers the objective).
        const auto na = static_cast<Eigen::Index>(active.size());
        const int memory = options.anderson_memory;
        Matrix history(na, memory > 0 ? memory + 1 : 0);
        int stored = 0;
        while (fit.sweeps < options.max_iters) {
            double max_move = 0.0;
            for (Eigen::Index j : active) {
                const double dj = d[j];
                const double old = x[j];
                const double g = A.column_dot(j, r) + dj * old;
                const double updated = soft_threshold(g, w[j]) / dj;
                const double delta = updated - old;
                if (delta != 0.0) {
                    x[j] = updated;
                    A.column_axpy(j, -delta, r);
                    max_move = std::max(max_move, dj * std::abs(delta));
                }
            }
            ++fit.sweeps;
            if (max_move > inner_tol && memory > 0) {
                for (Eigen::Index a = 0; a < na; ++a) history(a, stored) = x[active[static_cast<std::size_t>(a)]];
                if (++stored == memory + 1) {
                    stored = 0;
                    try_extrapolation(A, b, w, active, history, x, r);
                }
            }
            if (record_objective) fit.objective_trace.push_back(0.5 * r.squaredNorm() + penalty_term(w, x));
            if (max_move <= inner_tol) break;
        }
        if (options.screening) {
            // Drop coordinates that settled at zero; the next KKT pass re-adds them if needed.
            std::erase_if(active, [&](Eigen::Index j) {
                if (x[j] != 0.0) return false;
                in_active[static_cast<std::size_t>(j)] = 0;
                return true;
            });
        }
    }

    fit.estimate.coefficients = std::move(x);
    fit.kkt_residual = residual;
    fit.objective = 0.5 * r.squaredNorm() + penalty_term(w, fit.estimate.coefficients);
    return fit;
}

LassoFit fit_pretraining(std::span<const DatasetView> datasets, double lambda1, const SolverOptions& options,
                         const Estimate* warm_start)
{
    if (datasets.empty()) throw std::invalid_argument("fit_pretraining: no datasets");
    if (!(lambda1 >= 0.0) || !std::isfinite(lambda1))
        throw std::invalid_argument("fit_pretraining: lambda1 must be finite and >= 0");
    WeightedLassoProblem problem;
    Eigen::Index total = 0;
    for (const auto& ds : datasets) {
        if (ds.design.cols() != datasets.front().design.cols())
            throw std::invalid_argument("fit_pretraining: all designs must share the column count");
        if (!ds.response || ds.response->size() != ds.design.rows())
            throw std::invalid_argument("fit_pretraining: response length does not match design rows");
        problem.design.add(ds.design);
        total += ds.design.rows();
    }
    problem.response.resize(total);
    for (std::size_t b = 0; b < datasets.size(); ++b)
        problem.response.segment(problem.design.row_offset(b), datasets[b].design.rows()) = *datasets[b].response;
    problem.penalties = Vector::Constant(problem.design.cols(), lambda1);
    auto fit = fit_weighted_lasso(problem, options, warm_start);
    fit.estimate.stage = Stage::first;
    return fit;
}

Vector finetune_penalties(const Estimate& first_stage, double lambda2, double dlambda)
{
    const Eigen::Index n = first_stage.coefficients.size();
    Vector w(n);
    const double off_support = is_hard_constraint(dlambda) ? kHardConstraint : lambda2 + dlambda;
    for (Eigen::Index i = 0; i < n; ++i) w[i] = first_stage.coefficients[i] == 0.0 ? off_support : lambda2;
    return w;
}

LassoFit fit_finetune(const DatasetView& target, const Estimate& first_stage, const Hyperparams& hyper,
                      const SolverOptions& options, const Estimate* warm_start)
{
    hyper.validate();
    if (first_stage.coefficients.size() != target.design.cols())
        throw std::invalid_argument("fit_finetune: first-stage estimate does not match design columns");
    if (!target.response || target.response->size() != target.design.rows())
        throw std::invalid_argument("fit_finetune: response length does not match design rows");
    WeightedLassoProblem problem;
    problem.design.add(target.design);
    problem.response = *target.response;
    if (hyper.kappa != 0.0) problem.offset = hyper.kappa * (target.design * first_stage.coefficients);
    problem.penalties = finetune_penalties(first_stage, hyper.lambda2, hyper.dlambda);
    auto fit = fit_weighted_lasso(problem, options, warm_start);
    fit.estimate.stage = Stage::second;
    return fit;
}

GenErrors conditional_gen_error(const Estimate& first_stage, const Estimate* second_stage,
                                const GroundTruth& truth, const ProblemGeometry& geometry,
                                const Hyperparams& hyper)
{
    const std::size_t K = geometry.num_classes();
    if (truth.num_classes() != K || truth.num_features == 0)
        throw std::invalid_argument("conditional_gen_error: ground truth missing or inconsistent with geometry");
    const auto n = static_cast<Eigen::Index>(truth.num_features);
    if (first_stage.coefficients.size() != n || (second_stage && second_stage->coefficients.size() != n))
        throw std::invalid_argument("conditional_gen_error: estimate dimension mismatch");
    const double inv_n = 1.0 / static_cast<double>(n);

    GenErrors out;
    for (std::size_t k = 1; k <= K; ++k) {
        const double s = geometry.sigma()[k - 1];
        const double dist = (first_stage.coefficients - truth.class_target(k)).squaredNorm() * inv_n;
        out.first += geometry.alpha()[k - 1] * (dist + s * s);
    }
    if (second_stage) {
        const Vector combined = hyper.kappa * first_stage.coefficients + second_stage->coefficients;
        const double s = geometry.sigma()[0];
        out.second = geometry.alpha()[0] * ((combined - truth.class_target(1)).squaredNorm() * inv_n + s * s);
    }
    return out;
}

} // namespace translasso
