#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "translasso/lasso.hpp"
#include "translasso/model.hpp"

namespace translasso {

/**
 * One finite-N draw of the common and individual support model.
 *
 * The K design matrices are stored as row blocks of a single column-major
 * matrix so the pooled first stage can run without copying.
 */
struct Instance
{
    ProblemGeometry geometry;
    std::size_t num_features = 0;
    std::uint64_t seed = 0;
    Matrix stacked_design;
    std::vector<Eigen::Index> row_offsets;
    std::vector<Eigen::Index> row_counts;
    std::vector<Vector> responses;
    GroundTruth truth;

    std::size_t num_classes() const noexcept { return row_counts.size(); }
    /// Design of class k (1-based).
    MatrixView design(std::size_t k) const;
    DatasetView dataset(std::size_t k) const;
    std::vector<DatasetView> datasets() const;
};

/// Support size of a block: round(fraction * N).
std::size_t support_size(double fraction, std::size_t num_features);

Instance generate_instance(const ProblemGeometry& geometry, std::size_t num_features, std::uint64_t seed);

struct MeanWithError
{
    double mean = 0.0;
    double std_error = 0.0;
};

struct EmpiricalErrors
{
    MeanWithError first;
    MeanWithError second;
    int n_test_sets = 0;
};

/**
 * Monte Carlo test error: fresh (A~, y~) draws for every class, averaged
 * (1/N) ||y~ - A~ x||^2. Stage one sums over classes, stage two uses the
 * target class with x = kappa x1 + x2.
 */
EmpiricalErrors empirical_test_error(const Instance& instance, const Estimate& first_stage,
                                     const Estimate& second_stage, const Hyperparams& hyper, int n_test_sets,
                                     std::uint64_t seed);

/// Finite-N order parameters; m lists are indexed by support block.
struct EmpiricalOrderParams
{
    double q1 = 0.0;
    double q2 = 0.0;
    double qr = 0.0;
    std::vector<double> m1;
    std::vector<double> m2;
};

EmpiricalOrderParams empirical_order_params(const Instance& instance, const Estimate& first_stage,
                                            const Estimate& second_stage);

/// Binary snapshot with seed metadata; load(save(x)) is bit-identical.
void save_instance(const Instance& instance, const std::filesystem::path& path);
Instance load_instance(const std::filesystem::path& path);

} // namespace translasso
