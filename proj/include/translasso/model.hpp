#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace translasso {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Penalty value meaning "coefficient is pinned to zero".
inline constexpr double kHardConstraint = std::numeric_limits<double>::infinity();

inline bool is_hard_constraint(double penalty) noexcept
{
    return penalty == kHardConstraint;
}

/**
 * Asymptotic description of the multi-class problem.
 *
 * Classes are numbered 1..K as in the model description; the per-class
 * vectors below are stored 0-based, so class k lives at index k-1.
 * Support blocks are numbered 0..K: block 0 is the common support and
 * block k the support unique to class k. Overlap lists (m, m_hat) are
 * indexed by support block.
 */
class ProblemGeometry
{
public:
    ProblemGeometry(double pi0, std::vector<double> pi, std::vector<double> alpha,
                    std::vector<double> sigma);

    std::size_t num_classes() const noexcept { return pi_.size(); }
    double pi0() const noexcept { return pi0_; }
    std::span<const double> pi() const noexcept { return pi_; }
    std::span<const double> alpha() const noexcept { return alpha_; }
    std::span<const double> sigma() const noexcept { return sigma_; }

    /// Fraction of support block b (0 = common, k = unique to class k).
    double block_fraction(std::size_t block) const;
    double alpha_total() const noexcept;

    ProblemGeometry with_alpha(std::vector<double> alpha) const;
    ProblemGeometry with_sigma(std::vector<double> sigma) const;

    friend bool operator==(const ProblemGeometry&, const ProblemGeometry&) = default;

private:
    double pi0_;
    std::vector<double> pi_;
    std::vector<double> alpha_;
    std::vector<double> sigma_;
};

/// The four tunables of the two-stage estimator. dlambda may be kHardConstraint.
struct Hyperparams
{
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    double kappa = 0.0;
    double dlambda = 0.0;

    void validate() const;

    friend bool operator==(const Hyperparams&, const Hyperparams&) = default;
};

enum class Stage { first, second };

/// Fitted coefficient vector of one stage.
struct Estimate
{
    Vector coefficients;
    Stage stage = Stage::first;

    std::size_t size() const noexcept { return static_cast<std::size_t>(coefficients.size()); }
    /// Indices with coefficient exactly non-zero.
    std::vector<std::size_t> support() const;
    bool in_support(std::size_t i) const { return coefficients[static_cast<Eigen::Index>(i)] != 0.0; }
};

/**
 * Ground-truth feature vectors of the common and individual support model.
 * supports[b] / values[b] describe support block b (0 = common).
 */
struct GroundTruth
{
    std::size_t num_features = 0;
    std::vector<std::vector<std::size_t>> supports;
    std::vector<Vector> values;

    std::size_t num_classes() const noexcept { return supports.empty() ? 0 : supports.size() - 1; }
    /// Dense true regression vector of class k (1-based).
    Vector class_target(std::size_t k) const;
};

double negative_fraction(const ProblemGeometry& geometry) noexcept;

/// pi0 + pi_k + sigma_k^2 for class k in [1, K].
double rho(const ProblemGeometry& geometry, std::size_t k);

/// Pretraining-Lasso interpolation: (kappa, dlambda) = (1-s, lambda2 (1-s)/s).
std::pair<double, double> pretraining_path(double s, double lambda2);

} // namespace translasso
