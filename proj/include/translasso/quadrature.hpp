#pragma once

#include <vector>

namespace translasso {

/// Nodes and weights of a one-dimensional rule.
struct QuadratureRule
{
    std::vector<double> nodes;
    std::vector<double> weights;

    std::size_t size() const noexcept { return nodes.size(); }
};

/// Gauss-Hermite rule for the standard normal weight (weights sum to one).
QuadratureRule gauss_hermite(int n);

/// Gauss-Legendre rule on [-1, 1] (weights sum to two).
QuadratureRule gauss_legendre(int n);

/// Cached rules; the returned references stay valid for the program lifetime.
const QuadratureRule& cached_gauss_hermite(int n);
const QuadratureRule& cached_gauss_legendre(int n);

} // namespace translasso
