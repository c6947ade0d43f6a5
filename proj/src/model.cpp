#include "translasso/model.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace translasso {

namespace {

void require(bool ok, const std::string& what)
{
    if (!ok) throw std::invalid_argument(what);
}

bool is_fraction(double x) { return std::isfinite(x) && x >= 0.0 && x <= 1.0; }

} // namespace

ProblemGeometry::ProblemGeometry(double pi0, std::vector<double> pi, std::vector<double> alpha,
                                 std::vector<double> sigma)
    : pi0_(pi0), pi_(std::move(pi)), alpha_(std::move(alpha)), sigma_(std::move(sigma))
{
    require(!pi_.empty(), "geometry: at least one class is required");
    require(alpha_.size() == pi_.size() && sigma_.size() == pi_.size(),
            "geometry: pi, alpha and sigma must have one entry per class");
    require(is_fraction(pi0_), "geometry: pi0 must lie in [0, 1]");
    for (double p : pi_) require(is_fraction(p), "geometry: pi entries must lie in [0, 1]");
    for (double a : alpha_) require(std::isfinite(a) && a > 0.0, "geometry: alpha entries must be positive");
    for (double s : sigma_) require(std::isfinite(s) && s >= 0.0, "geometry: sigma entries must be non-negative");
    const double total = pi0_ + std::accumulate(pi_.begin(), pi_.end(), 0.0);
    // small slack for decimal inputs such as 0.1 + 0.45 + 0.45
    require(total <= 1.0 + 1e-12, "geometry: pi0 + sum(pi) must not exceed 1");
}

double ProblemGeometry::block_fraction(std::size_t block) const
{
    if (block == 0) return pi0_;
    if (block > pi_.size()) throw std::out_of_range("geometry: support block out of range");
    return pi_[block - 1];
}

double ProblemGeometry::alpha_total() const noexcept
{
    return std::accumulate(alpha_.begin(), alpha_.end(), 0.0);
}

ProblemGeometry ProblemGeometry::with_alpha(std::vector<double> alpha) const
{
    return {pi0_, pi_, std::move(alpha), sigma_};
}

ProblemGeometry ProblemGeometry::with_sigma(std::vector<double> sigma) const
{
    return {pi0_, pi_, alpha_, std::move(sigma)};
}

void Hyperparams::validate() const
{
    require(std::isfinite(lambda1) && lambda1 >= 0.0, "hyperparams: lambda1 must be finite and >= 0");
    require(std::isfinite(lambda2) && lambda2 >= 0.0, "hyperparams: lambda2 must be finite and >= 0");
    require(std::isfinite(kappa) && kappa >= 0.0, "hyperparams: kappa must be finite and >= 0");
    require(dlambda >= 0.0 && (std::isfinite(dlambda) || is_hard_constraint(dlambda)),
            "hyperparams: dlambda must be >= 0 (or the hard-constraint sentinel)");
}

std::vector<std::size_t> Estimate::support() const
{
    std::vector<std::size_t> out;
    for (Eigen::Index i = 0; i < coefficients.size(); ++i)
        if (coefficients[i] != 0.0) out.push_back(static_cast<std::size_t>(i));
    return out;
}

Vector GroundTruth::class_target(std::size_t k) const
{
    if (k == 0 || k > num_classes()) throw std::out_of_range("ground truth: class index out of range");
    Vector r = Vector::Zero(static_cast<Eigen::Index>(num_features));
    for (std::size_t block : {std::size_t{0}, k}) {
        const auto& idx = supports[block];
        for (std::size_t j = 0; j < idx.size(); ++j)
            r[static_cast<Eigen::Index>(idx[j])] = values[block][static_cast<Eigen::Index>(j)];
    }
    return r;
}

double negative_fraction(const ProblemGeometry& geometry) noexcept
{
    double total = geometry.pi0();
    for (double p : geometry.pi()) total += p;
    return std::max(0.0, 1.0 - total);
}

double rho(const ProblemGeometry& geometry, std::size_t k)
{
    if (k == 0 || k > geometry.num_classes())
        throw std::out_of_range("rho: class index must lie in [1, K]");
    const double s = geometry.sigma()[k - 1];
    return geometry.pi()[k - 1] + geometry.pi0() + s * s;
}

std::pair<double, double> pretraining_path(double s, double lambda2)
{
    if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("pretraining_path: s must lie in [0, 1]");
    if (s == 0.0) return {1.0, kHardConstraint};
    return {1.0 - s, lambda2 * (1.0 - s) / s};
}

} // namespace translasso
