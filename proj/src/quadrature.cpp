#include "translasso/quadrature.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace translasso {

namespace {

// Golub-Welsch: nodes are eigenvalues of the Jacobi matrix, weights are
// mu0 times the squared first eigenvector components.
QuadratureRule golub_welsch(const Eigen::VectorXd& off_diagonal, double mu0)
{
    const auto n = off_diagonal.size() + 1;
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i + 1 < n; ++i) {
        jacobi(i, i + 1) = off_diagonal[i];
        jacobi(i + 1, i) = off_diagonal[i];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
    QuadratureRule rule;
    rule.nodes.resize(static_cast<std::size_t>(n));
    rule.weights.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        rule.nodes[static_cast<std::size_t>(i)] = eig.eigenvalues()[i];
        const double v = eig.eigenvectors()(0, i);
        rule.weights[static_cast<std::size_t>(i)] = mu0 * v * v;
    }
    return rule;
}

// One cache per rule family; entries are never evicted so references stay valid.
class RuleCache
{
public:
    explicit RuleCache(QuadratureRule (*make)(int)) : make_(make) {}

    const QuadratureRule& get(int n)
    {
        std::lock_guard lock(mutex_);
        auto& slot = rules_[n];
        if (!slot) slot = std::make_unique<QuadratureRule>(make_(n));
        return *slot;
    }

private:
    QuadratureRule (*make_)(int);
    std::mutex mutex_;
    std::map<int, std::unique_ptr<QuadratureRule>> rules_;
};

} // namespace

QuadratureRule gauss_hermite(int n)
{
    if (n < 1) throw std::invalid_argument("gauss_hermite: n must be positive");
    if (n == 1) return {{0.0}, {1.0}};
    Eigen::VectorXd off(n - 1);
    for (int k = 1; k < n; ++k) off[k - 1] = std::sqrt(static_cast<double>(k));
    return golub_welsch(off, 1.0);
}

QuadratureRule gauss_legendre(int n)
{
    if (n < 1) throw std::invalid_argument("gauss_legendre: n must be positive");
    if (n == 1) return {{0.0}, {2.0}};
    Eigen::VectorXd off(n - 1);
    for (int k = 1; k < n; ++k) {
        const double kk = static_cast<double>(k);
        off[k - 1] = kk / std::sqrt(4.0 * kk * kk - 1.0);
    }
    return golub_welsch(off, 2.0);
}

const QuadratureRule& cached_gauss_hermite(int n)
{
    static RuleCache cache(gauss_hermite);
    return cache.get(n);
}

const QuadratureRule& cached_gauss_legendre(int n)
{
    static RuleCache cache(gauss_legendre);
    return cache.get(n);
}

} // namespace translasso
