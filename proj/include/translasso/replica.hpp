#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "translasso/model.hpp"

namespace translasso {

/// Iteration metadata attached to a solved order-parameter set.
struct SolveInfo
{
    int iterations = 0;
    double residual = 0.0;
    double damping = 0.0;
};

/**
 * First-stage order parameters. m1 / m1_hat are indexed by support block
 * (0 = common, k = unique to class k).
 */
struct Theta1
{
    std::vector<double> m1;
    std::vector<double> m1_hat;
    double q1 = 0.0;
    double q1_hat = 0.0;
    double chi1 = 0.0;
    double chi1_hat = 0.0;
    SolveInfo info;
};

/// Second-stage order parameters, same block indexing as Theta1.
struct Theta2
{
    std::vector<double> m2;
    std::vector<double> m2_hat;
    double q2 = 0.0;
    double q2_hat = 0.0;
    double qr = 0.0;
    double qr_hat = 0.0;
    double chi2 = 0.0;
    double chi2_hat = 0.0;
    double chir = 0.0;
    double chir_hat = 0.0;
    /// Set when chi2_hat - chir_hat^2 / chi1_hat < 0 was clipped to zero.
    bool variance_clipped = false;
    SolveInfo info;
};

/// A = (kappa - chir) / (1 + chi1)
double coupling_a(const Theta1& t1, const Theta2& t2, double kappa);
/// B = 1 - (chir + kappa chi1) / (1 + chi1)
double coupling_b(const Theta1& t1, const Theta2& t2, double kappa);

enum class ExpectationMethod { quadrature, monte_carlo };

/**
 * How the cross response chir differentiates the second-stage estimator
 * with respect to the first-stage field.
 *
 * hold_stage2_field: the stage-two field z2 is held fixed, so only the
 * dependence through x1 (the qr_hat x1 shift and the support-dependent
 * penalty) contributes. This is the stationarity condition of the
 * second-stage free energy in chir_hat.
 *
 * total: z2 is split into its z1-correlated part plus an independent
 * innovation and the innovation is held fixed, so the correlated field
 * contributes as well (adds chir_hat / chi1_hat * chi2).
 */
enum class CrossResponse { hold_stage2_field, total };

struct ExpectationOptions
{
    ExpectationMethod method = ExpectationMethod::quadrature;
    int hermite_nodes = 80;        ///< outer Gaussian (signal) dimension
    int legendre_nodes = 40;       ///< per piece of the first-stage field integral
    double field_cutoff = 10.0;    ///< first-stage field integrated over [-cutoff, cutoff]
    std::int64_t mc_samples = 1000000;
    std::uint64_t mc_seed = 0;
};

struct SolveOptions
{
    double damping = 0.5;
    double min_damping = 1.0 / 64.0;
    double tolerance = 1e-10;
    int max_iters = 20000;
    ExpectationOptions expectation;
    CrossResponse cross_response = CrossResponse::hold_stage2_field;
};

class ReplicaError : public std::runtime_error
{
public:
    enum class Kind { non_convergence, oscillation, non_finite, invalid_state };

    ReplicaError(Kind kind, const std::string& what, double residual = 0.0)
        : std::runtime_error(what), kind_(kind), residual_(residual)
    {
    }
    Kind kind() const noexcept { return kind_; }
    double residual() const noexcept { return residual_; }

private:
    Kind kind_;
    double residual_;
};

/// Minimizer of q1_hat/2 x^2 - (sqrt(chi1_hat) z1 + m1_hat_k xstar) x + lambda1 |x|.
double stage1_scalar(double q1_hat, double chi1_hat, double m1_hat_k, double lambda1, double z1, double xstar);

/**
 * Minimizer of q2_hat/2 x^2 - (sqrt(chi2_hat) z2 + m2_hat_k xstar + qr_hat x1) x
 *              + (lambda2 + dlambda I[x1 = 0]) |x|.
 * dlambda may be kHardConstraint.
 */
double stage2_scalar(double q2_hat, double chi2_hat, double m2_hat_k, double qr_hat, double lambda2,
                     double dlambda, double z2, double xstar, double x1);

/// Expectations of the first-stage scalar problem (non-hat half of the update).
struct Stage1Moments
{
    double q1 = 0.0;
    double chi1 = 0.0;
    std::vector<double> m1;
};

/// Expectations of the second-stage scalar problem (non-hat half of the update).
struct Stage2Moments
{
    double q2 = 0.0;
    double qr = 0.0;
    double chi2 = 0.0;
    double chir = 0.0;
    std::vector<double> m2;
};

/// Closed-form first-stage fixed point in the lambda1 -> infinity limit (zero estimator).
Theta1 stage1_initial(const ProblemGeometry& geometry);

/// Hat variables recomputed from the non-hat variables of t.
Theta1 stage1_hats(const Theta1& t, const ProblemGeometry& geometry);

/**
 * Expectations over (z1, xstar) using the hat variables of t. The
 * quadrature path is closed form (Gaussian tail integrals); the Monte Carlo
 * path fills std_error when given.
 */
Stage1Moments stage1_moments(const Theta1& t, const ProblemGeometry& geometry, double lambda1,
                             const ExpectationOptions& options, Stage1Moments* std_error = nullptr);

/// One application of the update map: fresh hats, then moments from those hats.
Theta1 stage1_rhs(const Theta1& t, const ProblemGeometry& geometry, double lambda1, const SolveOptions& options);

/// Largest componentwise difference between two first-stage sets.
double stage1_distance(const Theta1& a, const Theta1& b);

Theta1 solve_stage1(const ProblemGeometry& geometry, double lambda1, const SolveOptions& options = {},
                    const Theta1* warm_start = nullptr);

/// Decoupled initial point: all non-hat second-stage variables zero.
Theta2 stage2_initial(const Theta1& t1, const ProblemGeometry& geometry, const Hyperparams& hyper);

Theta2 stage2_hats(const Theta2& t2, const Theta1& t1, const ProblemGeometry& geometry, double kappa);

/**
 * Expectations over (z1, innovation, xstar). Quadrature integrates the
 * innovation analytically, the first-stage field piecewise between the
 * soft-threshold kinks, and the signal by Gauss-Hermite. Monte Carlo
 * evaluates chir through the Gaussian integration-by-parts form
 * E[x2 z1] / sqrt(chi1_hat) - (chir_hat / chi1_hat) chi2, independent of
 * the analytic derivative used by quadrature.
 */
Stage2Moments stage2_moments(const Theta2& t2, const Theta1& t1, const ProblemGeometry& geometry,
                             const Hyperparams& hyper, const ExpectationOptions& options,
                             CrossResponse cross = CrossResponse::hold_stage2_field,
                             Stage2Moments* std_error = nullptr);

Theta2 stage2_rhs(const Theta2& t2, const Theta1& t1, const ProblemGeometry& geometry, const Hyperparams& hyper,
                  const SolveOptions& options);

double stage2_distance(const Theta2& a, const Theta2& b);

Theta2 solve_stage2(const Theta1& t1, const ProblemGeometry& geometry, const Hyperparams& hyper,
                    const SolveOptions& options = {}, const Theta2* warm_start = nullptr);

/// sum_k alpha_k [q1 - 2(m1_0 + m1_k) + rho_k]
double eps1(const Theta1& t1, const ProblemGeometry& geometry);

/// alpha_1 [q2 + kappa^2 q1 + 2 kappa qr + rho_1 - 2(m2_0 + m2_1) - 2 kappa (m1_0 + m1_1)]
double eps2(const Theta1& t1, const Theta2& t2, const ProblemGeometry& geometry, double kappa);

/// Predicted large-N limits of the finite-N order parameters.
struct OrderParamReport
{
    double q1 = 0.0;
    double q2 = 0.0;
    double qr = 0.0;
    std::vector<double> m1;
    std::vector<double> m2;
};

OrderParamReport order_params(const Theta1& t1, const Theta2& t2);

/// Both stages solved at one hyperparameter point.
struct ReplicaPoint
{
    Theta1 theta1;
    Theta2 theta2;
    double eps1 = 0.0;
    double eps2 = 0.0;
};

ReplicaPoint solve_point(const ProblemGeometry& geometry, const Hyperparams& hyper, const SolveOptions& options = {},
                         const Theta1* warm1 = nullptr, const Theta2* warm2 = nullptr);

} // namespace translasso
