#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "translasso/gaussian.hpp"
#include "translasso/model.hpp"

namespace translasso {

/// Non-owning view of a column-major matrix or of a row block of one.
using MatrixView = Eigen::Map<const Matrix, 0, Eigen::OuterStride<>>;

inline MatrixView view_of(const Matrix& m)
{
    return {m.data(), m.rows(), m.cols(), Eigen::OuterStride<>(m.outerStride())};
}

inline MatrixView view_rows(const Matrix& m, Eigen::Index first_row, Eigen::Index rows)
{
    return {m.data() + first_row, rows, m.cols(), Eigen::OuterStride<>(m.outerStride())};
}

/// Vertically stacked row blocks sharing one column space; nothing is copied.
class StackedDesign
{
public:
    StackedDesign() = default;
    explicit StackedDesign(MatrixView block) { add(block); }

    void add(MatrixView block);

    Eigen::Index rows() const noexcept { return rows_; }
    Eigen::Index cols() const noexcept { return cols_; }
    std::size_t num_blocks() const noexcept { return blocks_.size(); }
    const MatrixView& block(std::size_t b) const { return blocks_[b]; }
    Eigen::Index row_offset(std::size_t b) const { return offsets_[b]; }

    /// out = A x
    void multiply(const Vector& x, Vector& out) const;
    /// out = A^T r
    void multiply_transpose(const Vector& r, Vector& out) const;
    double column_dot(Eigen::Index j, const Vector& r) const;
    void column_axpy(Eigen::Index j, double scale, Vector& r) const;
    Vector column_squared_norms() const;

private:
    std::vector<MatrixView> blocks_;
    std::vector<Eigen::Index> offsets_;
    Eigen::Index rows_ = 0;
    Eigen::Index cols_ = 0;
};

/// min_x 1/2 ||(response - offset) - A x||^2 + sum_i penalties_i |x_i|
struct WeightedLassoProblem
{
    StackedDesign design;
    Vector response;
    Vector offset;     // empty means zero
    Vector penalties;  // entries may be kHardConstraint

    void validate() const;
    Vector target() const;
};

struct SolverOptions
{
    double tolerance = 1e-8;
    int max_iters = 200000;  ///< coordinate-descent sweeps, summed over active-set rounds
    bool screening = true;
    int anderson_memory = 5;  ///< 0 disables extrapolation
};

/// Thrown when the solver exhausts max_iters; carries the final KKT residual.
class NonConvergenceError : public std::runtime_error
{
public:
    NonConvergenceError(const std::string& what, double residual, Estimate last)
        : std::runtime_error(what), residual_(residual), last_(std::move(last))
    {
    }
    double residual() const noexcept { return residual_; }
    const Estimate& last_iterate() const noexcept { return last_; }

private:
    double residual_;
    Estimate last_;
};

struct LassoFit
{
    Estimate estimate;
    double kkt_residual = 0.0;
    double objective = 0.0;
    int sweeps = 0;
    /// Objective after every sweep (only recorded when requested).
    std::vector<double> objective_trace;
};

/// Maximum violation of the subgradient optimality conditions at x.
double kkt_violation(const WeightedLassoProblem& problem, const Vector& x);
double lasso_objective(const WeightedLassoProblem& problem, const Vector& x);

LassoFit fit_weighted_lasso(const WeightedLassoProblem& problem, const SolverOptions& options = {},
                            const Estimate* warm_start = nullptr, bool record_objective = false);

/// Borrowed (design, response) pair of one class.
struct DatasetView
{
    MatrixView design;
    const Vector* response;
};

/// Pooled first-stage Lasso over all datasets with uniform penalty lambda1.
LassoFit fit_pretraining(std::span<const DatasetView> datasets, double lambda1,
                         const SolverOptions& options = {}, const Estimate* warm_start = nullptr);

/// Support-weighted, offset second-stage Lasso on the target dataset.
LassoFit fit_finetune(const DatasetView& target, const Estimate& first_stage, const Hyperparams& hyper,
                      const SolverOptions& options = {}, const Estimate* warm_start = nullptr);

/// Penalty vector of the second stage: lambda2 on supp(first), lambda2 + dlambda elsewhere.
Vector finetune_penalties(const Estimate& first_stage, double lambda2, double dlambda);

struct GenErrors
{
    double first = 0.0;
    double second = 0.0;
};

/**
 * Generalization errors conditional on the training data, exact over fresh
 * Gaussian test designs with variance-1/N entries:
 *   first  = sum_k alpha_k (||x1 - r_k||^2 / N + sigma_k^2)
 *   second = alpha_1 (||kappa x1 + x2 - r_1||^2 / N + sigma_1^2)
 * When second_stage is null only the first entry is meaningful.
 */
GenErrors conditional_gen_error(const Estimate& first_stage, const Estimate* second_stage,
                                const GroundTruth& truth, const ProblemGeometry& geometry,
                                const Hyperparams& hyper);

} // namespace translasso
