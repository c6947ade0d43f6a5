#pragma once

// Reference computations written independently of the library internals.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

struct Rule
{
    std::vector<double> x;
    std::vector<double> w;
};

/// Gauss-Legendre on [-1, 1] by Newton iteration on P_n.
inline Rule legendre(int n)
{
    Rule r;
    r.x.resize(n);
    r.w.resize(n);
    for (int i = 0; i < n; ++i) {
        double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= n; ++k) {
            const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        dp = n * (x * p1 - p0) / (x * x - 1.0);
        r.x[i] = x;
        r.w[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    return r;
}

/// Integral of f over [lo, hi], split at the given interior points.
inline double integrate(const std::function<double(double)>& f, double lo, double hi, std::vector<double> cuts,
                        int nodes = 40)
{
    static thread_local Rule rule;
    if (static_cast<int>(rule.x.size()) != nodes) rule = legendre(nodes);
    cuts.push_back(lo);
    cuts.push_back(hi);
    std::sort(cuts.begin(), cuts.end());
    double total = 0.0;
    for (std::size_t p = 0; p + 1 < cuts.size(); ++p) {
        const double a = std::clamp(cuts[p], lo, hi), b = std::clamp(cuts[p + 1], lo, hi);
        if (!(b > a)) continue;
        const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
        for (int i = 0; i < nodes; ++i) total += half * rule.w[i] * f(mid + half * rule.x[i]);
    }
    return total;
}

inline double phi(double x)
{
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

inline double soft(double h, double t)
{
    return h > t ? h - t : (h < -t ? h + t : 0.0);
}

/**
 * FISTA for min 1/2 ||b - A x||^2 + sum w_i |x_i| (w_i = inf pins x_i = 0),
 * run for a fixed number of iterations.
 */
inline Eigen::VectorXd fista(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Eigen::VectorXd& w,
                             int iterations = 20000)
{
    const double L = Eigen::JacobiSVD<Eigen::MatrixXd>(A).singularValues()(0);
    const double step = 1.0 / (L * L);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(A.cols()), y = x, prev = x;
    double t = 1.0;
    for (int it = 0; it < iterations; ++it) {
        const Eigen::VectorXd g = y - step * (A.transpose() * (A * y - b));
        for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = std::isinf(w[i]) ? 0.0 : soft(g[i], step * w[i]);
        const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        y = x + ((t - 1.0) / tn) * (x - prev);
        prev = x;
        t = tn;
    }
    return x;
}

} // namespace oracle
