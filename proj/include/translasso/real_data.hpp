#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "translasso/model.hpp"
#include "translasso/strategies.hpp"

namespace translasso {

/// Malformed or inconsistent input tables.
class DataError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Files of one class: a training table and an optional held-out test table.
struct ClassSource
{
    std::string name;
    std::filesystem::path train;
    std::optional<std::filesystem::path> test;
};

struct LoadOptions
{
    std::string response_column = "y";
    char delimiter = '\0';  ///< '\0' picks ',' or '\t' from the header line
    bool standardize = false;
};

/// Per-column affine map x -> (x - mean) / scale.
struct Standardization
{
    Vector mean;
    Vector scale;

    void apply(Matrix& design) const;
    /// Coefficients on the original column scale (the model has no intercept, so only the scale changes).
    Vector to_original_scale(const Vector& coefficients) const;
};

struct ClassDataset
{
    std::string name;
    Matrix design;
    Vector response;
    Matrix test_design;  ///< zero rows when no test table was given
    Vector test_response;

    bool has_test() const noexcept { return test_design.rows() > 0; }
};

struct DataCollection
{
    std::vector<std::string> feature_names;
    std::vector<ClassDataset> classes;
    std::optional<Standardization> standardization;

    std::size_t index_of(const std::string& name) const;
};

/// One delimited table with a header row; the response column is split off.
struct Table
{
    std::vector<std::string> feature_names;
    Matrix design;
    Vector response;
};

Table read_table(const std::filesystem::path& path, const LoadOptions& options);
/// Writes with 17 significant digits, so read_table(write_table(t)) is bit-identical.
void write_table(const std::filesystem::path& path, std::span<const std::string> feature_names,
                 const Matrix& design, const Vector& response, const std::string& response_column = "y",
                 char delimiter = ',');

/**
 * Loads every class and checks that all tables share the header. With
 * standardization on, statistics come from the pooled training rows of all
 * classes and are applied to training and test rows alike.
 */
DataCollection load_classes(std::span<const ClassSource> sources, const LoadOptions& options);

/// Jackknife standard error of the mean of values (leave-one-out means).
double jackknife_std_error(std::span<const double> values);

struct TestReport
{
    int rows = 0;
    double mse = 0.0;
    double jackknife_se = 0.0;
};

struct PipelineResult
{
    std::string target;
    TuningResult tuning;
    Hyperparams hyper;
    Estimate first_stage;
    Estimate second_stage;
    /// kappa x1 + x2, on the (possibly standardized) working scale.
    Vector coefficients;
    /// Test-set report; rows = 0 when the target class has no test table.
    TestReport test;
};

/**
 * Cross-validated two-stage fit: hyperparameters by cv_tune, then the first
 * stage refitted on all training rows and the second stage on the target's
 * training rows.
 */
PipelineResult run_pipeline(const DataCollection& data, const std::string& target, StrategyKind strategy,
                            const CvOptions& cv, const SearchGrids& grids);

/// Two-column table (feature, value).
void write_coefficients(const std::filesystem::path& path, std::span<const std::string> feature_names,
                        const Vector& coefficients);

} // namespace translasso
