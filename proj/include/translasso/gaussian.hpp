#pragma once

#include <cmath>
#include <numbers>

namespace translasso {

inline double normal_pdf(double x) noexcept
{
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

inline double normal_cdf(double x) noexcept
{
    return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

/// sign(h) max(|h| - threshold, 0); the unique minimizer of x^2/2 - h x + threshold |x|.
inline double soft_threshold(double h, double threshold) noexcept
{
    if (h > threshold) return h - threshold;
    if (h < -threshold) return h + threshold;
    return 0.0;
}

/**
 * Moments of S(h, t) for h ~ N(mean, sd^2): E[S], E[S^2] and P(|h| > t).
 * t may be infinite (everything is zero) and sd may be zero.
 */
struct ThresholdMoments
{
    double first = 0.0;
    double second = 0.0;
    double active = 0.0;
};

inline ThresholdMoments threshold_moments(double mean, double sd, double t) noexcept
{
    ThresholdMoments out;
    if (std::isinf(t)) return out;
    if (sd <= 0.0) {
        const double s = soft_threshold(mean, t);
        out.first = s;
        out.second = s * s;
        out.active = s != 0.0 ? 1.0 : 0.0;
        return out;
    }
    const double up = mean - t;  // S = h - t on h > t
    const double dn = mean + t;  // S = h + t on h < -t
    const double dp = up / sd;
    const double dm = -dn / sd;
    const double cp = normal_cdf(dp), pp = normal_pdf(dp);
    const double cm = normal_cdf(dm), pm = normal_pdf(dm);
    out.active = cp + cm;
    out.first = up * cp + sd * pp + dn * cm - sd * pm;
    out.second = (up * up + sd * sd) * cp + up * sd * pp + (dn * dn + sd * sd) * cm - dn * sd * pm;
    return out;
}

} // namespace translasso
