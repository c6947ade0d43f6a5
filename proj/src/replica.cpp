#include "translasso/replica.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "translasso/gaussian.hpp"
#include "translasso/quadrature.hpp"
#include "translasso/rng.hpp"

namespace translasso {

double coupling_a(const Theta1& t1, const Theta2& t2, double kappa)
{
    return (kappa - t2.chir) / (1.0 + t1.chi1);
}

double coupling_b(const Theta1& t1, const Theta2& t2, double kappa)
{
    return 1.0 - (t2.chir + kappa * t1.chi1) / (1.0 + t1.chi1);
}

double stage1_scalar(double q1_hat, double chi1_hat, double m1_hat_k, double lambda1, double z1, double xstar)
{
    if (!(q1_hat > 0.0)) throw std::invalid_argument("stage1_scalar: q1_hat must be positive");
    return soft_threshold(std::sqrt(chi1_hat) * z1 + m1_hat_k * xstar, lambda1) / q1_hat;
}

double stage2_scalar(double q2_hat, double chi2_hat, double m2_hat_k, double qr_hat, double lambda2,
                     double dlambda, double z2, double xstar, double x1)
{
    if (!(q2_hat > 0.0)) throw std::invalid_argument("stage2_scalar: q2_hat must be positive");
    if (x1 == 0.0 && is_hard_constraint(dlambda)) return 0.0;
    const double threshold = x1 == 0.0 ? lambda2 + dlambda : lambda2;
    return soft_threshold(std::sqrt(chi2_hat) * z2 + m2_hat_k * xstar + qr_hat * x1, threshold) / q2_hat;
}

namespace {

void require_finite(double v, const char* name)
{
    if (!std::isfinite(v))
        throw ReplicaError(ReplicaError::Kind::non_finite, std::string("replica: non-finite ") + name);
}

// Running mean / variance of one scalar sample stream.
struct Accumulator
{
    double sum = 0.0;
    double sum_sq = 0.0;

    void add(double v)
    {
        sum += v;
        sum_sq += v * v;
    }
    double mean(double n) const { return sum / n; }
    double variance_of_mean(double n) const
    {
        const double m = sum / n;
        return std::max(0.0, (sum_sq / n - m * m) / (n - 1.0));
    }
};

// Support blocks 0..K followed by the negative set (no signal).
struct BlockSpec
{
    double fraction;
    double m1_hat;
    double m2_hat;
    bool has_signal;
};

std::vector<BlockSpec> blocks_of(const ProblemGeometry& g, const std::vector<double>& m1_hat,
                                 const std::vector<double>* m2_hat)
{
    std::vector<BlockSpec> out;
    for (std::size_t b = 0; b <= g.num_classes(); ++b)
        out.push_back({g.block_fraction(b), m1_hat[b], m2_hat ? (*m2_hat)[b] : 0.0, true});
    out.push_back({negative_fraction(g), 0.0, 0.0, false});
    return out;
}

} // namespace

Theta1 stage1_initial(const ProblemGeometry& geometry)
{
    Theta1 t;
    const std::size_t K = geometry.num_classes();
    t.m1.assign(K + 1, 0.0);
    t.m1_hat.assign(K + 1, 0.0);
    return stage1_hats(t, geometry);
}

Theta1 stage1_hats(const Theta1& t, const ProblemGeometry& geometry)
{
    const std::size_t K = geometry.num_classes();
    if (t.m1.size() != K + 1) throw std::invalid_argument("stage1_hats: m1 must have K+1 entries");
    const double denom = 1.0 + t.chi1;
    if (!(denom > 0.0)) throw ReplicaError(ReplicaError::Kind::invalid_state, "stage1: 1 + chi1 must be positive");
    Theta1 out = t;
    out.m1_hat.assign(K + 1, 0.0);
    out.q1_hat = geometry.alpha_total() / denom;
    out.m1_hat[0] = out.q1_hat;
    double chi_hat = 0.0;
    for (std::size_t k = 1; k <= K; ++k) {
        const double a = geometry.alpha()[k - 1];
        out.m1_hat[k] = a / denom;
        chi_hat += a * (t.q1 - 2.0 * (t.m1[0] + t.m1[k]) + rho(geometry, k));
    }
    out.chi1_hat = chi_hat / (denom * denom);
    return out;
}

Stage1Moments stage1_moments(const Theta1& t, const ProblemGeometry& geometry, double lambda1,
                             const ExpectationOptions& options, Stage1Moments* std_error)
{
    if (!(t.q1_hat > 0.0)) throw ReplicaError(ReplicaError::Kind::invalid_state, "stage1: q1_hat must be positive");
    const double chi_hat = std::max(0.0, t.chi1_hat);
    const auto blocks = blocks_of(geometry, t.m1_hat, nullptr);
    const std::size_t K = geometry.num_classes();
    Stage1Moments out;
    out.m1.assign(K + 1, 0.0);

    if (options.method == ExpectationMethod::quadrature) {
        // Field sqrt(chi_hat) z + m_hat x* is N(0, chi_hat + m_hat^2); E[S x*] = m_hat P(active).
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const auto& blk = blocks[b];
            const double sd = std::sqrt(chi_hat + blk.m1_hat * blk.m1_hat);
            const auto tm = threshold_moments(0.0, sd, lambda1);
            out.q1 += blk.fraction * tm.second / (t.q1_hat * t.q1_hat);
            out.chi1 += blk.fraction * tm.active / t.q1_hat;
            if (blk.has_signal) out.m1[b] = blk.fraction * blk.m1_hat * tm.active / t.q1_hat;
        }
        if (std_error) *std_error = Stage1Moments{0.0, 0.0, std::vector<double>(K + 1, 0.0)};
        return out;
    }

    if (options.mc_samples < 2) throw std::invalid_argument("stage1_moments: mc_samples must be at least 2");
    const auto n = static_cast<double>(options.mc_samples);
    std::normal_distribution<double> gauss(0.0, 1.0);
    double var_q = 0.0, var_chi = 0.0;
    std::vector<double> var_m(K + 1, 0.0);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const auto& blk = blocks[b];
        if (blk.fraction == 0.0) continue;
        auto rng = make_stream(options.mc_seed, streams::monte_carlo, b);
        Accumulator sq, over, act;
        for (std::int64_t i = 0; i < options.mc_samples; ++i) {
            const double xs = blk.has_signal ? gauss(rng) : 0.0;
            const double z = gauss(rng);
            const double x = stage1_scalar(t.q1_hat, chi_hat, blk.m1_hat, lambda1, z, xs);
            sq.add(x * x);
            over.add(x * xs);
            act.add(x != 0.0 ? 1.0 / t.q1_hat : 0.0);
        }
        const double f = blk.fraction;
        out.q1 += f * sq.mean(n);
        out.chi1 += f * act.mean(n);
        var_q += f * f * sq.variance_of_mean(n);
        var_chi += f * f * act.variance_of_mean(n);
        if (blk.has_signal) {
            out.m1[b] = f * over.mean(n);
            var_m[b] = f * f * over.variance_of_mean(n);
        }
    }
    if (std_error) {
        std_error->q1 = std::sqrt(var_q);
        std_error->chi1 = std::sqrt(var_chi);
        std_error->m1.resize(K + 1);
        for (std::size_t b = 0; b <= K; ++b) std_error->m1[b] = std::sqrt(var_m[b]);
    }
    return out;
}

Theta1 stage1_rhs(const Theta1& t, const ProblemGeometry& geometry, double lambda1, const SolveOptions& options)
{
    Theta1 out = stage1_hats(t, geometry);
    const auto mom = stage1_moments(out, geometry, lambda1, options.expectation);
    out.q1 = mom.q1;
    out.chi1 = mom.chi1;
    out.m1 = mom.m1;
    return out;
}

namespace {

std::vector<double> pack(const Theta1& t)
{
    std::vector<double> v{t.q1, t.q1_hat, t.chi1, t.chi1_hat};
    v.insert(v.end(), t.m1.begin(), t.m1.end());
    v.insert(v.end(), t.m1_hat.begin(), t.m1_hat.end());
    return v;
}

void unpack(const std::vector<double>& v, Theta1& t)
{
    t.q1 = v[0];
    t.q1_hat = v[1];
    t.chi1 = v[2];
    t.chi1_hat = v[3];
    const std::size_t n = t.m1.size();
    std::copy_n(v.begin() + 4, n, t.m1.begin());
    std::copy_n(v.begin() + 4 + static_cast<std::ptrdiff_t>(n), n, t.m1_hat.begin());
}

std::vector<double> pack(const Theta2& t)
{
    std::vector<double> v{t.q2, t.q2_hat, t.qr, t.qr_hat, t.chi2, t.chi2_hat, t.chir, t.chir_hat};
    v.insert(v.end(), t.m2.begin(), t.m2.end());
    v.insert(v.end(), t.m2_hat.begin(), t.m2_hat.end());
    return v;
}

void unpack(const std::vector<double>& v, Theta2& t)
{
    t.q2 = v[0];
    t.q2_hat = v[1];
    t.qr = v[2];
    t.qr_hat = v[3];
    t.chi2 = v[4];
    t.chi2_hat = v[5];
    t.chir = v[6];
    t.chir_hat = v[7];
    const std::size_t n = t.m2.size();
    std::copy_n(v.begin() + 8, n, t.m2.begin());
    std::copy_n(v.begin() + 8 + static_cast<std::ptrdiff_t>(n), n, t.m2_hat.begin());
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b)
{
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double di = std::abs(a[i] - b[i]);
        if (std::isnan(di)) return std::numeric_limits<double>::infinity();
        d = std::max(d, di);
    }
    return d;
}

// Damped iteration theta <- (1 - gamma) theta + gamma rhs(theta), gamma halved on oscillation.
template <class Theta, class Rhs>
Theta damped_solve(Theta theta, Rhs rhs, const SolveOptions& options, const char* stage)
{
    if (!(options.tolerance > 0.0)) throw std::invalid_argument("solve options: tolerance must be positive");
    if (!(options.damping > 0.0 && options.damping <= 1.0))
        throw std::invalid_argument("solve options: damping must lie in (0, 1]");
    // Stall detection over windows: the residual of a damped contraction may
    // decrease non-monotonically, so compare the best residual per window.
    constexpr int window = 25;
    double gamma = options.damping;
    double best_previous = std::numeric_limits<double>::infinity();
    double best_current = best_previous;
    double residual = best_previous;
    for (int it = 1; it <= options.max_iters; ++it) {
        const Theta next = rhs(theta);
        const auto x = pack(theta);
        const auto y = pack(next);
        residual = max_abs_diff(x, y);
        for (double v : y) require_finite(v, stage);
        if (residual <= options.tolerance) {
            theta.info = {it, residual, gamma};
            return theta;
        }
        best_current = std::min(best_current, residual);
        if (it % window == 0) {
            if (!(best_current < 0.9 * best_previous) && std::isfinite(best_previous)) {
                gamma *= 0.5;
                if (gamma < options.min_damping)
                    throw ReplicaError(ReplicaError::Kind::oscillation,
                                       std::string(stage) +
                                           ": oscillation persists at minimum damping; use stronger damping",
                                       residual);
            }
            best_previous = best_current;
            best_current = std::numeric_limits<double>::infinity();
        }
        std::vector<double> mixed(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) mixed[i] = (1.0 - gamma) * x[i] + gamma * y[i];
        Theta blended = next;
        unpack(mixed, blended);
        theta = std::move(blended);
    }
    throw ReplicaError(ReplicaError::Kind::non_convergence,
                       std::string(stage) + ": no convergence within max_iters (residual " +
                           std::to_string(residual) + ")",
                       residual);
}

} // namespace

double stage1_distance(const Theta1& a, const Theta1& b)
{
    return max_abs_diff(pack(a), pack(b));
}

double stage2_distance(const Theta2& a, const Theta2& b)
{
    return max_abs_diff(pack(a), pack(b));
}

Theta1 solve_stage1(const ProblemGeometry& geometry, double lambda1, const SolveOptions& options,
                    const Theta1* warm_start)
{
    if (!(lambda1 > 0.0)) throw std::invalid_argument("solve_stage1: lambda1 must be positive");
    Theta1 init = warm_start ? *warm_start : stage1_initial(geometry);
    if (init.m1.size() != geometry.num_classes() + 1) init = stage1_initial(geometry);
    return damped_solve(
        init, [&](const Theta1& t) { return stage1_rhs(t, geometry, lambda1, options); }, options, "stage1");
}

Theta2 stage2_initial(const Theta1& t1, const ProblemGeometry& geometry, const Hyperparams& hyper)
{
    Theta2 t;
    const std::size_t K = geometry.num_classes();
    t.m2.assign(K + 1, 0.0);
    t.m2_hat.assign(K + 1, 0.0);
    return stage2_hats(t, t1, geometry, hyper.kappa);
}

Theta2 stage2_hats(const Theta2& t2, const Theta1& t1, const ProblemGeometry& geometry, double kappa)
{
    const std::size_t K = geometry.num_classes();
    if (t2.m2.size() != K + 1 || t1.m1.size() != K + 1)
        throw std::invalid_argument("stage2_hats: overlap lists must have K+1 entries");
    const double d2 = 1.0 + t2.chi2;
    if (!(d2 > 0.0)) throw ReplicaError(ReplicaError::Kind::invalid_state, "stage2: 1 + chi2 must be positive");
    const double d1 = 1.0 + t1.chi1;
    const double a1 = geometry.alpha()[0];
    const double rho1 = rho(geometry, 1);
    const double A = coupling_a(t1, t2, kappa);
    const double B = coupling_b(t1, t2, kappa);
    const double m1_target = t1.m1[0] + t1.m1[1];
    const double m2_target = t2.m2[0] + t2.m2[1];

    Theta2 out = t2;
    out.q2_hat = a1 / d2;
    out.qr_hat = -a1 * A / d2;
    // Only the target class's data enters the second stage, so only blocks 0 and 1 carry signal.
    out.m2_hat.assign(K + 1, 0.0);
    out.m2_hat[0] = a1 * B / d2;
    out.m2_hat[1] = a1 * B / d2;
    out.chi2_hat = a1 *
                   (t2.q2 + A * A * t1.q1 + 2.0 * A * t2.qr + B * B * rho1 - 2.0 * B * m2_target -
                    2.0 * A * B * m1_target) /
                   (d2 * d2);
    // Covariance of the two stages' residuals on target rows: E[R e] with
    // R = B H - A h1 - h2 and e = H - h1.
    out.chir_hat = a1 * (B * rho1 + A * t1.q1 + t2.qr - m2_target - (A + B) * m1_target) / (d1 * d2);
    return out;
}

namespace {

struct FieldCoupling
{
    double c = 0.0;  // coefficient of z1 in sqrt(chi2_hat) z2
    double s = 0.0;  // innovation standard deviation
    bool clipped = false;
};

FieldCoupling coupling_of(const Theta2& t2, const Theta1& t1)
{
    FieldCoupling fc;
    if (t1.chi1_hat > 0.0) {
        fc.c = t2.chir_hat / std::sqrt(t1.chi1_hat);
        double var = t2.chi2_hat - t2.chir_hat * t2.chir_hat / t1.chi1_hat;
        if (var < 0.0) {
            fc.clipped = var < -1e-12 * std::max(1.0, t2.chi2_hat);
            var = 0.0;
        }
        fc.s = std::sqrt(var);
    } else {
        fc.s = std::sqrt(std::max(0.0, t2.chi2_hat));
        fc.clipped = t2.chi2_hat < 0.0;
    }
    return fc;
}

// Per-block integrals, before division by q2_hat and weighting by the block fraction.
struct BlockIntegrals
{
    double second = 0.0;     // E[S^2]
    double cross = 0.0;      // E[x1 S]
    double overlap = 0.0;    // E[x* S]
    double active = 0.0;     // P(x2 != 0)
    double both = 0.0;       // P(x1 != 0, x2 != 0)
    double jump = 0.0;       // penalty-switch contribution to d E[S] / d(sqrt(chi1_hat) z1)

    void add(const BlockIntegrals& o, double w)
    {
        second += w * o.second;
        cross += w * o.cross;
        overlap += w * o.overlap;
        active += w * o.active;
        both += w * o.both;
        jump += w * o.jump;
    }
};

struct Stage2Context
{
    double q1_hat, chi1_hat, sqrt_chi1_hat, lambda1;
    double q2_hat, qr_hat, lambda2, off_threshold;
    FieldCoupling fc;
};

// Integral over z1 (and analytically over the innovation) at fixed x*.
BlockIntegrals integrate_field(const Stage2Context& ctx, const BlockSpec& blk, double xs,
                               const ExpectationOptions& opt)
{
    BlockIntegrals out;
    auto point = [&](double z1, double w) {
        const double g1 = ctx.sqrt_chi1_hat * z1 + blk.m1_hat * xs;
        const double x1 = soft_threshold(g1, ctx.lambda1) / ctx.q1_hat;
        const double t = x1 != 0.0 ? ctx.lambda2 : ctx.off_threshold;
        const double mean = ctx.fc.c * z1 + blk.m2_hat * xs + ctx.qr_hat * x1;
        const auto tm = threshold_moments(mean, ctx.fc.s, t);
        out.second += w * tm.second;
        out.cross += w * x1 * tm.first;
        out.overlap += w * xs * tm.first;
        out.active += w * tm.active;
        if (x1 != 0.0) out.both += w * tm.active;
    };

    if (ctx.sqrt_chi1_hat == 0.0) {
        point(0.0, 1.0);
        return out;
    }
    const double L = opt.field_cutoff;
    const double lo = (-ctx.lambda1 - blk.m1_hat * xs) / ctx.sqrt_chi1_hat;
    const double hi = (ctx.lambda1 - blk.m1_hat * xs) / ctx.sqrt_chi1_hat;
    const std::array<double, 4> breaks{-L, std::clamp(lo, -L, L), std::clamp(hi, -L, L), L};
    const auto& rule = cached_gauss_legendre(opt.legendre_nodes);
    for (std::size_t p = 0; p + 1 < breaks.size(); ++p) {
        const double half = 0.5 * (breaks[p + 1] - breaks[p]);
        if (half <= 0.0) continue;
        const double mid = 0.5 * (breaks[p + 1] + breaks[p]);
        for (std::size_t i = 0; i < rule.size(); ++i) {
            const double z = mid + half * rule.nodes[i];
            point(z, half * rule.weights[i] * normal_pdf(z));
        }
    }

    // The penalty switches from lambda2 + dlambda to lambda2 where |g1| crosses lambda1.
    if (ctx.off_threshold != ctx.lambda2) {
        const auto mean_at = [&](double z) { return ctx.fc.c * z + blk.m2_hat * xs; };
        const double on_hi = threshold_moments(mean_at(hi), ctx.fc.s, ctx.lambda2).first;
        const double off_hi = threshold_moments(mean_at(hi), ctx.fc.s, ctx.off_threshold).first;
        const double on_lo = threshold_moments(mean_at(lo), ctx.fc.s, ctx.lambda2).first;
        const double off_lo = threshold_moments(mean_at(lo), ctx.fc.s, ctx.off_threshold).first;
        out.jump += normal_pdf(hi) / ctx.sqrt_chi1_hat * (on_hi - off_hi);
        out.jump += normal_pdf(lo) / ctx.sqrt_chi1_hat * (off_lo - on_lo);
    }
    return out;
}

} // namespace

Stage2Moments stage2_moments(const Theta2& t2, const Theta1& t1, const ProblemGeometry& geometry,
                             const Hyperparams& hyper, const ExpectationOptions& options, CrossResponse cross,
                             Stage2Moments* std_error)
{
    if (!(t1.q1_hat > 0.0) || !(t2.q2_hat > 0.0))
        throw ReplicaError(ReplicaError::Kind::invalid_state, "stage2: q1_hat and q2_hat must be positive");
    const std::size_t K = geometry.num_classes();
    Stage2Context ctx;
    ctx.q1_hat = t1.q1_hat;
    ctx.chi1_hat = std::max(0.0, t1.chi1_hat);
    ctx.sqrt_chi1_hat = std::sqrt(ctx.chi1_hat);
    ctx.lambda1 = hyper.lambda1;
    ctx.q2_hat = t2.q2_hat;
    ctx.qr_hat = t2.qr_hat;
    ctx.lambda2 = hyper.lambda2;
    ctx.off_threshold = is_hard_constraint(hyper.dlambda) ? kHardConstraint : hyper.lambda2 + hyper.dlambda;
    ctx.fc = coupling_of(t2, t1);
    const auto blocks = blocks_of(geometry, t1.m1_hat, &t2.m2_hat);
    const double total_shift = ctx.chi1_hat > 0.0 ? t2.chir_hat / ctx.chi1_hat : 0.0;

    Stage2Moments out;
    out.m2.assign(K + 1, 0.0);

    if (options.method == ExpectationMethod::quadrature) {
        // (x*, z1) -> (-x*, -z1) flips x1 and x2, so every integrand is even: use the
        // positive half of the symmetric Hermite rule with doubled weights.
        const auto& gh = cached_gauss_hermite(options.hermite_nodes);
        double chir_sum = 0.0;
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const auto& blk = blocks[b];
            if (blk.fraction == 0.0) continue;
            BlockIntegrals acc;
            if (blk.has_signal) {
                for (std::size_t i = 0; i < gh.size(); ++i) {
                    if (gh.nodes[i] < 0.0) continue;
                    const double w = gh.nodes[i] == 0.0 ? gh.weights[i] : 2.0 * gh.weights[i];
                    acc.add(integrate_field(ctx, blk, gh.nodes[i], options), w);
                }
            } else {
                acc = integrate_field(ctx, blk, 0.0, options);
            }
            const double f = blk.fraction;
            out.q2 += f * acc.second / (ctx.q2_hat * ctx.q2_hat);
            out.qr += f * acc.cross / ctx.q2_hat;
            out.chi2 += f * acc.active / ctx.q2_hat;
            chir_sum += f * (ctx.qr_hat * acc.both / (ctx.q1_hat * ctx.q2_hat) + acc.jump / ctx.q2_hat);
            if (blk.has_signal) out.m2[b] = f * acc.overlap / ctx.q2_hat;
        }
        out.chir = chir_sum;
        if (cross == CrossResponse::total) out.chir += total_shift * out.chi2;
        if (std_error) *std_error = Stage2Moments{0.0, 0.0, 0.0, 0.0, std::vector<double>(K + 1, 0.0)};
        return out;
    }

    if (options.mc_samples < 2) throw std::invalid_argument("stage2_moments: mc_samples must be at least 2");
    if (ctx.chi1_hat <= 0.0) throw ReplicaError(ReplicaError::Kind::invalid_state, "stage2 MC: chi1_hat must be positive");
    const auto n = static_cast<double>(options.mc_samples);
    std::normal_distribution<double> gauss(0.0, 1.0);
    double var_q2 = 0.0, var_qr = 0.0, var_chi2 = 0.0, var_chir = 0.0;
    std::vector<double> var_m(K + 1, 0.0);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const auto& blk = blocks[b];
        if (blk.fraction == 0.0) continue;
        auto rng = make_stream(options.mc_seed, streams::monte_carlo, 100 + b);
        Accumulator sq, cr, ov, act, resp;
        for (std::int64_t i = 0; i < options.mc_samples; ++i) {
            const double xs = blk.has_signal ? gauss(rng) : 0.0;
            const double z1 = gauss(rng);
            const double zeta = gauss(rng);
            const double x1 = stage1_scalar(ctx.q1_hat, ctx.chi1_hat, blk.m1_hat, ctx.lambda1, z1, xs);
            const double t = x1 != 0.0 ? ctx.lambda2 : ctx.off_threshold;
            const double h = ctx.fc.c * z1 + ctx.fc.s * zeta + blk.m2_hat * xs + ctx.qr_hat * x1;
            const double x2 = soft_threshold(h, t) / ctx.q2_hat;
            const double a = x2 != 0.0 ? 1.0 / ctx.q2_hat : 0.0;
            sq.add(x2 * x2);
            cr.add(x2 * x1);
            ov.add(x2 * xs);
            act.add(a);
            double r = x2 * z1 / ctx.sqrt_chi1_hat;
            if (cross == CrossResponse::hold_stage2_field) r -= total_shift * a;
            resp.add(r);
        }
        const double f = blk.fraction;
        out.q2 += f * sq.mean(n);
        out.qr += f * cr.mean(n);
        out.chi2 += f * act.mean(n);
        out.chir += f * resp.mean(n);
        var_q2 += f * f * sq.variance_of_mean(n);
        var_qr += f * f * cr.variance_of_mean(n);
        var_chi2 += f * f * act.variance_of_mean(n);
        var_chir += f * f * resp.variance_of_mean(n);
        if (blk.has_signal) {
            out.m2[b] = f * ov.mean(n);
            var_m[b] = f * f * ov.variance_of_mean(n);
        }
    }
    if (std_error) {
        std_error->q2 = std::sqrt(var_q2);
        std_error->qr = std::sqrt(var_qr);
        std_error->chi2 = std::sqrt(var_chi2);
        std_error->chir = std::sqrt(var_chir);
        std_error->m2.resize(K + 1);
        for (std::size_t b = 0; b <= K; ++b) std_error->m2[b] = std::sqrt(var_m[b]);
    }
    return out;
}

Theta2 stage2_rhs(const Theta2& t2, const Theta1& t1, const ProblemGeometry& geometry, const Hyperparams& hyper,
                  const SolveOptions& options)
{
    Theta2 out = stage2_hats(t2, t1, geometry, hyper.kappa);
    out.variance_clipped = coupling_of(out, t1).clipped;
    const auto mom = stage2_moments(out, t1, geometry, hyper, options.expectation, options.cross_response);
    out.q2 = mom.q2;
    out.qr = mom.qr;
    out.chi2 = mom.chi2;
    out.chir = mom.chir;
    out.m2 = mom.m2;
    return out;
}

Theta2 solve_stage2(const Theta1& t1, const ProblemGeometry& geometry, const Hyperparams& hyper,
                    const SolveOptions& options, const Theta2* warm_start)
{
    hyper.validate();
    Theta2 init = warm_start ? *warm_start : stage2_initial(t1, geometry, hyper);
    if (init.m2.size() != geometry.num_classes() + 1) init = stage2_initial(t1, geometry, hyper);
    return damped_solve(
        init, [&](const Theta2& t) { return stage2_rhs(t, t1, geometry, hyper, options); }, options, "stage2");
}

double eps1(const Theta1& t1, const ProblemGeometry& geometry)
{
    double e = 0.0;
    for (std::size_t k = 1; k <= geometry.num_classes(); ++k)
        e += geometry.alpha()[k - 1] * (t1.q1 - 2.0 * (t1.m1[0] + t1.m1[k]) + rho(geometry, k));
    return e;
}

double eps2(const Theta1& t1, const Theta2& t2, const ProblemGeometry& geometry, double kappa)
{
    return geometry.alpha()[0] * (t2.q2 + kappa * kappa * t1.q1 + 2.0 * kappa * t2.qr + rho(geometry, 1) -
                                  2.0 * (t2.m2[0] + t2.m2[1]) - 2.0 * kappa * (t1.m1[0] + t1.m1[1]));
}

OrderParamReport order_params(const Theta1& t1, const Theta2& t2)
{
    return {t1.q1, t2.q2, t2.qr, t1.m1, t2.m2};
}

ReplicaPoint solve_point(const ProblemGeometry& geometry, const Hyperparams& hyper, const SolveOptions& options,
                         const Theta1* warm1, const Theta2* warm2)
{
    ReplicaPoint p;
    p.theta1 = solve_stage1(geometry, hyper.lambda1, options, warm1);
    p.theta2 = solve_stage2(p.theta1, geometry, hyper, options, warm2);
    p.eps1 = eps1(p.theta1, geometry);
    p.eps2 = eps2(p.theta1, p.theta2, geometry, hyper.kappa);
    return p;
}

} // namespace translasso
