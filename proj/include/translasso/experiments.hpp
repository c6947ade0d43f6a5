#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "translasso/lasso.hpp"
#include "translasso/model.hpp"
#include "translasso/real_data.hpp"
#include "translasso/replica.hpp"
#include "translasso/strategies.hpp"
#include "translasso/synthetic.hpp"

namespace translasso {

inline constexpr const char* kCodeVersion = "0.1.0";

/// Invalid configuration; the message names the field and, when known, its line.
class ConfigError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

struct RealDataConfig
{
    std::vector<ClassSource> classes;
    std::string target;
    LoadOptions load;
    StrategyKind strategy = StrategyKind::dlambda_zero;
    int folds = 10;
};

/// Fully defaulted run configuration. Optional lambdas are tuned on the replica prediction when unset.
struct ExperimentConfig
{
    std::uint64_t seed = 0;
    ProblemGeometry geometry{0.10, {0.09, 0.09}, {0.2, 0.8}, {0.1, 0.1}};

    std::optional<double> lambda1;
    std::optional<double> lambda2;
    double kappa = 1.0;
    double dlambda = 0.0;

    std::string sweep_mode = "hyperparams";  ///< "hyperparams" or "strategies"
    std::vector<double> alpha1_grid;
    std::vector<double> alpha2_grid;
    std::vector<double> sigma_grid;
    std::vector<double> kappa_grid;
    std::vector<double> dlambda_grid;

    std::size_t num_features = 4000;
    int realizations = 32;
    int test_sets = 256;  ///< 0 uses the exact expectation over test designs
    bool join_replica = true;

    std::vector<StrategyKind> strategies = all_strategies();
    SearchGrids grids = SearchGrids::defaults();
    SolveOptions replica;
    SolverOptions lasso;
    RealDataConfig realdata;
};

/// Parses a YAML document; `origin` names the source in error messages and anchors relative paths.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& origin = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical JSON of the resolved configuration (every default filled in).
std::string resolved_config_json(const ExperimentConfig& config);
/// 64-bit FNV-1a of resolved_config_json, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

struct EmpiricalSummary
{
    MeanWithError eps1;
    MeanWithError eps2;
    MeanWithError q1;
    MeanWithError q2;
    MeanWithError qr;
    std::vector<MeanWithError> m1;
    std::vector<MeanWithError> m2;
    int realizations = 0;
    int failures = 0;
};

/// One output row; which of replica / empirical is filled follows the run mode.
struct SweepRecord
{
    std::string mode;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<double> pi;  ///< pi0 followed by the class-unique fractions
    std::vector<double> alpha;
    std::vector<double> sigma;
    std::string strategy;
    Hyperparams hyper;
    std::optional<ReplicaPoint> replica;
    std::optional<EmpiricalSummary> empirical;
    double ratio_best_simple = std::numeric_limits<double>::quiet_NaN();
    double ratio_pretrain = std::numeric_limits<double>::quiet_NaN();
    double ratio_trans = std::numeric_limits<double>::quiet_NaN();
    bool skipped = false;
    std::string note;

    /// "replica", "empirical" or "both".
    std::string content() const;
};

enum class OutputFormat { csv, json };

/// Column names in output order; stable across runs.
const std::vector<std::string>& record_columns();
/// CSV cells: lists joined by ';', missing values empty, doubles with 17 significant digits.
std::vector<std::string> record_cells(const SweepRecord& record);
std::string format_records(std::span<const SweepRecord> records, OutputFormat format);
void write_records(const std::filesystem::path& path, std::span<const SweepRecord> records, OutputFormat format);

/**
 * Finite-N simulation of several hyperparameter points on shared instances.
 * Realization r uses instance seed stream_seed(seed, realization, r), so the
 * result does not depend on the worker count.
 */
std::vector<EmpiricalSummary> simulate_points(const ProblemGeometry& geometry, std::size_t num_features,
                                              std::span<const Hyperparams> points, int realizations, int test_sets,
                                              std::uint64_t seed, const SolverOptions& solver = {}, int workers = 1);

/// Unset lambdas of `base` tuned on the replica prediction (lambda1 on eps1, then lambda2 on eps2).
Hyperparams resolve_hyperparams(const ProblemGeometry& geometry, const Hyperparams& base, bool tune_lambda1_flag,
                                bool tune_lambda2_flag, const SearchGrids& grids, const SolveOptions& options);

std::vector<SweepRecord> cmd_replica_solve(const ExperimentConfig& config);
std::vector<SweepRecord> cmd_sweep(const ExperimentConfig& config, int workers = 1);
std::vector<SweepRecord> cmd_simulate(const ExperimentConfig& config, int workers = 1);
std::vector<SweepRecord> cmd_strategies(const ExperimentConfig& config, int workers = 1);

struct RealDataRun
{
    DataCollection data;
    PipelineResult result;
};

/// Loads the configured classes and runs the cross-validated pipeline.
RealDataRun cmd_realdata(const ExperimentConfig& config);
/// report.json (hyperparameters, CV objective, test MSE with jackknife SE) and coefficients.csv.
void write_realdata_outputs(const std::filesystem::path& out_dir, const ExperimentConfig& config, const RealDataRun& run);

} // namespace translasso
