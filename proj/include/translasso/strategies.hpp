#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "translasso/lasso.hpp"
#include "translasso/model.hpp"
#include "translasso/replica.hpp"

namespace translasso {

enum class StrategyKind {
    kappa_zero,
    dlambda_zero,
    locally_optimal,
    globally_optimal,
    trans_lasso,
    pretraining_path,
};

std::string_view to_string(StrategyKind kind);
/// Accepts the names produced by to_string; throws std::invalid_argument otherwise.
StrategyKind strategy_from_string(std::string_view name);
const std::vector<StrategyKind>& all_strategies();

/// Search spaces and refinement settings shared by every strategy.
struct SearchGrids
{
    std::vector<double> kappa;    ///< coarse kappa grid
    std::vector<double> dlambda_ratio;     ///< coarse grid of dlambda / lambda2 (0 allowed)
    double dlambda_ratio_max = 100.0;      ///< upper bound of the continuous dlambda / lambda2 search
    bool include_hard_constraint = false;  ///< also try dlambda = +inf on the coarse grid
    std::vector<double> pretraining_s;     ///< coarse s grid in [0, 1]
    double lambda_min = 1e-3;
    double lambda_max = 10.0;
    int lambda_points = 17;               ///< log grid used when no warm hint exists
    double refine_tolerance = 1e-4;       ///< relative tolerance of the 1-D refinements
    double improvement_tolerance = 1e-9;  ///< cyclic searches stop below this relative gain
    int max_cycles = 8;

    /// kappa 0..1.5 step 0.1; dlambda / lambda2 0..1 step 0.1; s 0..1 step 0.1.
    static SearchGrids defaults();
    /// Replaces the dlambda / lambda2 grid by {0} plus `points` log-spaced values in [lo, hi].
    SearchGrids& with_log_dlambda(int points = 21, double lo = 1e-2, double hi = 10.0);
    void validate() const;
};

struct TracePoint
{
    Hyperparams hyper;
    double objective = 0.0;
    bool skipped = false;
    std::string note;
};

struct TuningResult
{
    StrategyKind kind = StrategyKind::trans_lasso;
    Hyperparams chosen;
    double objective = 0.0;
    std::vector<TracePoint> trace;
    /// Converged order parameters at the chosen point (replica-backed runs only).
    std::optional<ReplicaPoint> state;
    int skipped_points = 0;
};

/**
 * Memoized objective over hyperparameters. Every evaluation is appended to
 * the active trace; failures are recorded as skipped points with value +inf.
 */
class TuningObjective
{
public:
    virtual ~TuningObjective() = default;

    double value(const Hyperparams& hyper);
    /// Evaluations requested from now on are appended to trace (nullptr stops recording).
    void record_into(std::vector<TracePoint>* trace);

protected:
    /// Throws on failure; the message becomes the trace note.
    virtual double compute(const Hyperparams& hyper) = 0;

private:
    struct Entry
    {
        double value;
        bool skipped;
        std::string note;
    };
    std::map<std::array<double, 4>, Entry> memo_;
    std::vector<TracePoint>* recorder_ = nullptr;
    std::set<std::array<double, 4>> recorded_;
};

/// Second-stage replica error eps2 as the objective; first stages are cached per lambda1.
class ReplicaObjective : public TuningObjective
{
public:
    ReplicaObjective(ProblemGeometry geometry, SolveOptions options);

    const Theta1& theta1(double lambda1);
    /// Solved state at a point evaluated earlier (solves it if needed).
    ReplicaPoint point(const Hyperparams& hyper);
    const ProblemGeometry& geometry() const { return geometry_; }

protected:
    double compute(const Hyperparams& hyper) override;

private:
    ProblemGeometry geometry_;
    SolveOptions options_;
    std::map<double, Theta1> stage1_;
    std::map<std::array<double, 4>, Theta2> stage2_;
    std::map<double, Theta2> last_stage2_;  // warm start per lambda1
};

struct Lambda1Result
{
    double lambda1 = 0.0;
    Theta1 theta1;
    double eps1 = 0.0;
    std::vector<std::pair<double, double>> trace;  ///< (lambda1, eps1)
    /// Coarse grid had more than one local minimum; the global grid minimum was refined.
    bool nonconvex = false;
};

/// Minimizes eps1 over lambda1 by a log grid with warm-started continuation, then Brent refinement.
Lambda1Result tune_lambda1(const ProblemGeometry& geometry, const SearchGrids& grids, const SolveOptions& options = {});

/**
 * Runs one strategy against an objective. lambda1 is the first-stage
 * penalty held fixed by every strategy except globally_optimal. Seeds are
 * results of the strategies nested inside this one; their chosen points
 * enter the trace so the nesting inequalities hold exactly.
 */
TuningResult tune_stage2(TuningObjective& objective, StrategyKind kind, double lambda1, const SearchGrids& grids,
                         std::span<const TuningResult> seeds = {});

/// Minimizes over lambda2 with lambda1, kappa and dlambda of `fixed` held; returns the best evaluated point.
TracePoint tune_lambda2(TuningObjective& objective, const Hyperparams& fixed, const SearchGrids& grids);

/// Strategies that must run before `kind` so that its search contains theirs.
std::vector<StrategyKind> nested_strategies(StrategyKind kind);

/// Runs the requested strategies (plus whatever they nest) on one objective; output follows `kinds`.
std::vector<TuningResult> tune_strategies(TuningObjective& objective, std::span<const StrategyKind> kinds,
                                          double lambda1, const SearchGrids& grids);

struct ComparisonRow
{
    double sigma = 0.0;
    StrategyKind kind = StrategyKind::trans_lasso;
    double eps2 = 0.0;
    Hyperparams hyper;
    /// min(eps_dlambda0, eps_kappa0) / eps_LO, eps_pretrain / eps_LO, eps_trans / eps_LO (NaN when missing).
    double ratio_best_simple = 0.0;
    double ratio_pretrain = 0.0;
    double ratio_trans = 0.0;
    int skipped_points = 0;
};

/**
 * Replica-backed strategy comparison over a noise grid (the same sigma for
 * every class). The ratio columns are filled on every row of a sigma value.
 */
std::vector<ComparisonRow> strategy_compare(const ProblemGeometry& geometry, std::span<const double> sigma_grid,
                                            std::span<const StrategyKind> kinds, const SearchGrids& grids,
                                            const SolveOptions& options = {}, int workers = 1);

/// Cross-validation settings for finite data.
struct CvOptions
{
    int folds = 10;
    std::uint64_t seed = 0;
    SolverOptions solver;
};

/**
 * K-fold cross-validation objective. Fold f holds out the f-th part of every
 * class; the first stage is fitted on the remaining rows of all classes, so
 * it never sees held-out target rows. The value is the mean held-out squared
 * prediction error on the target class (dataset 0).
 */
class CvObjective : public TuningObjective
{
public:
    CvObjective(std::span<const DatasetView> datasets, const CvOptions& options);

    int folds() const { return static_cast<int>(folds_.size()); }
    /// Held-out squared error of the first stage on all classes, per row.
    double stage1_cv_error(double lambda1);
    /// Row indices of dataset k held out by fold f.
    const std::vector<Eigen::Index>& held_out(std::size_t k, int f) const;

protected:
    double compute(const Hyperparams& hyper) override;

private:
    struct FoldData
    {
        std::vector<Matrix> train_designs;
        std::vector<Vector> train_responses;
        std::vector<Matrix> test_designs;
        std::vector<Vector> test_responses;
    };
    const std::vector<Estimate>& stage1_fits(double lambda1);

    CvOptions options_;
    std::vector<std::vector<std::vector<Eigen::Index>>> held_out_;  // [class][fold] -> rows
    std::vector<FoldData> folds_;
    std::map<double, std::vector<Estimate>> stage1_;
    std::vector<Estimate> last_stage1_;
    std::vector<Estimate> last_stage2_;
};

/// Deterministic fold labels: a seeded permutation of the rows dealt round-robin.
std::vector<int> assign_folds(Eigen::Index rows, int folds, std::uint64_t seed, std::uint64_t stream);

/// lambda1 minimizing the first-stage CV error (log grid, then Brent).
double cv_lambda1(CvObjective& objective, const SearchGrids& grids);

/**
 * Cross-validated tuning of one strategy on finite data. lambda1 comes from
 * cv_lambda1 except for globally_optimal, which also searches it.
 */
TuningResult cv_tune(std::span<const DatasetView> datasets, StrategyKind kind, const CvOptions& cv,
                     const SearchGrids& grids);

} // namespace translasso
