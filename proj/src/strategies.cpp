#include "translasso/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <tuple>

#include <boost/math/tools/minima.hpp>

#include "translasso/parallel.hpp"
#include "translasso/rng.hpp"

namespace translasso {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
// Stand-in for +inf inside Brent's parabolic steps.
constexpr double kLarge = 1e100;
// dlambda / lambda2 is searched in u = log(ratio + kRatioShift); u at its lower bound is exactly 0.
constexpr double kRatioShift = 1e-3;

std::array<double, 4> key_of(const Hyperparams& h)
{
    return {h.lambda1, h.lambda2, h.kappa, h.dlambda};
}

bool lex_less(const Hyperparams& a, const Hyperparams& b)
{
    return std::tie(a.kappa, a.dlambda, a.lambda2, a.lambda1) < std::tie(b.kappa, b.dlambda, b.lambda2, b.lambda1);
}

std::vector<double> linear_grid(double lo, double hi, int n)
{
    std::vector<double> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = n == 1 ? lo : lo + (hi - lo) * i / (n - 1);
    return out;
}

std::vector<double> log_grid(double lo, double hi, int n)
{
    auto out = linear_grid(std::log(lo), std::log(hi), n);
    for (double& v : out) v = std::exp(v);
    out.front() = lo;
    out.back() = hi;
    return out;
}

int brent_bits(double tol)
{
    return std::clamp(static_cast<int>(std::ceil(-std::log2(tol))) + 1, 4, 50);
}

struct LineResult
{
    double x;
    double value;
};

/**
 * Bracket expansion from x0 followed by Brent's method inside the bracket.
 * Returns the best point evaluated, bounds included.
 */
LineResult line_minimize(const std::function<double(double)>& f, double x0, double step, double lo, double hi,
                         double tol)
{
    LineResult best{std::clamp(x0, lo, hi), kInf};
    auto eval = [&](double x) {
        const double v = f(x);
        if (v < best.value) best = {x, v};
        return v;
    };
    x0 = best.x;
    const double f0 = eval(x0);
    if (!(hi > lo)) return best;
    step = std::min(step, hi - lo);

    auto expand = [&](double dir, double first, double f_first) {
        double prev = x0, cur = first, f_cur = f_first, s = step;
        while (true) {
            const double bound = dir > 0 ? hi : lo;
            if (cur == bound) return std::pair{prev, bound};
            s *= 2.0;
            const double next = dir > 0 ? std::min(cur + s, hi) : std::max(cur - s, lo);
            const double f_next = eval(next);
            if (!(f_next < f_cur)) return std::pair{prev, next};
            prev = cur;
            cur = next;
            f_cur = f_next;
        }
    };

    double a = x0, b = x0;
    const double right = std::min(x0 + step, hi);
    const double f_right = right > x0 ? eval(right) : kInf;
    if (f_right < f0) {
        std::tie(a, b) = expand(1.0, right, f_right);
    } else {
        const double left = std::max(x0 - step, lo);
        const double f_left = left < x0 ? eval(left) : kInf;
        if (f_left < f0) {
            std::tie(b, a) = expand(-1.0, left, f_left);
        } else {
            a = left;
            b = right;
        }
    }
    if (a > b) std::swap(a, b);
    if (b - a > tol * (1.0 + std::abs(best.x))) {
        std::uintmax_t max_iter = 200;
        boost::math::tools::brent_find_minima(
            [&](double x) {
                const double v = eval(x);
                return std::isfinite(v) ? v : kLarge;
            },
            a, b, brent_bits(tol), max_iter);
    }
    return best;
}

double finite_or_large(double v)
{
    return std::isfinite(v) ? v : kLarge;
}

/// Coordinates of a point in the joint search space. ratio = dlambda / lambda2, +inf for the hard constraint.
struct Coords
{
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    double kappa = 0.0;
    double ratio = 0.0;
};

Hyperparams to_hyper(const Coords& c)
{
    return {c.lambda1, c.lambda2, c.kappa, std::isinf(c.ratio) ? kHardConstraint : c.ratio * c.lambda2};
}

Coords to_coords(const Hyperparams& h)
{
    double ratio = 0.0;
    if (is_hard_constraint(h.dlambda))
        ratio = kInf;
    else if (h.lambda2 > 0.0)
        ratio = h.dlambda / h.lambda2;
    return {h.lambda1, h.lambda2, h.kappa, ratio};
}

const TracePoint* trace_minimum(const std::vector<TracePoint>& trace)
{
    const TracePoint* best = nullptr;
    for (const auto& p : trace) {
        if (p.skipped || !std::isfinite(p.objective)) continue;
        if (!best || p.objective < best->objective ||
            (p.objective == best->objective && lex_less(p.hyper, best->hyper)))
            best = &p;
    }
    return best;
}

/// Search state of one strategy run: objective, grids, the running trace and a lambda2 warm hint.
class StrategySearch
{
public:
    StrategySearch(TuningObjective& objective, const SearchGrids& grids, std::vector<TracePoint>& trace)
        : objective_(objective), grids_(grids), trace_(trace)
    {
    }

    double value(const Hyperparams& h) { return objective_.value(h); }

    /// Minimum over lambda2 with the other coordinates of c fixed; returns the objective.
    double inner(Coords c)
    {
        auto f = [&](double v) {
            c.lambda2 = std::exp(v);
            return value(to_hyper(c));
        };
        const double lo = std::log(grids_.lambda_min), hi = std::log(grids_.lambda_max);
        double x0, step;
        if (hint_) {
            x0 = std::log(*hint_);
            step = 0.25;
        } else {
            const auto grid = linear_grid(lo, hi, grids_.lambda_points);
            std::size_t arg = 0;
            double fb = kInf;
            for (std::size_t i = 0; i < grid.size(); ++i) {
                const double v = f(grid[i]);
                if (v < fb) {
                    fb = v;
                    arg = i;
                }
            }
            x0 = grid[arg];
            step = grid.size() > 1 ? grid[1] - grid[0] : 0.25;
        }
        const auto r = line_minimize(f, x0, step, lo, hi, grids_.refine_tolerance);
        if (std::isfinite(r.value)) hint_ = std::exp(r.x);
        return r.value;
    }

    void set_hint(double lambda2) { hint_ = lambda2; }

    /// Current best point of the trace.
    Coords best() const
    {
        const auto* p = trace_minimum(trace_);
        if (!p) throw std::runtime_error("strategy search: every evaluated point failed");
        return to_coords(p->hyper);
    }
    double best_value() const
    {
        const auto* p = trace_minimum(trace_);
        return p ? p->objective : kInf;
    }

    /// Line search over one coordinate of the current best point, lambda2 minimized inside.
    void line(const std::function<double(const Coords&)>& get, const std::function<void(Coords&, double)>& set,
              double step, double lo, double hi)
    {
        Coords start = best();
        set_hint(start.lambda2);
        line_minimize(
            [&](double x) {
                Coords c = start;
                set(c, x);
                return inner(c);
            },
            get(start), step, lo, hi, grids_.refine_tolerance);
    }

    /// Repeats passes of coordinate line searches until the relative gain stalls.
    void cyclic(const std::vector<std::function<void()>>& passes)
    {
        double current = best_value();
        for (int cycle = 0; cycle < grids_.max_cycles; ++cycle) {
            for (const auto& pass : passes) pass();
            const double now = best_value();
            if (!(current - now > grids_.improvement_tolerance * std::abs(current))) break;
            current = now;
        }
    }

    const SearchGrids& grids() const { return grids_; }

private:
    TuningObjective& objective_;
    const SearchGrids& grids_;
    std::vector<TracePoint>& trace_;
    std::optional<double> hint_;
};

double ratio_from_u(double u, double u_lo)
{
    return u <= u_lo ? 0.0 : std::exp(u) - kRatioShift;
}

double u_from_ratio(double ratio, double u_lo, double u_hi)
{
    if (std::isinf(ratio)) return u_hi;
    return ratio <= 0.0 ? u_lo : std::clamp(std::log(ratio + kRatioShift), u_lo, u_hi);
}

void search_kappa(StrategySearch& s)
{
    const auto& g = s.grids();
    const double lo = *std::min_element(g.kappa.begin(), g.kappa.end());
    const double hi = *std::max_element(g.kappa.begin(), g.kappa.end());
    s.line([](const Coords& c) { return c.kappa; }, [](Coords& c, double x) { c.kappa = x; }, 0.1, lo, hi);
}

void search_ratio(StrategySearch& s)
{
    const double u_lo = std::log(kRatioShift);
    const double u_hi = std::log(s.grids().dlambda_ratio_max + kRatioShift);
    s.line([=](const Coords& c) { return u_from_ratio(c.ratio, u_lo, u_hi); },
           [=](Coords& c, double u) { c.ratio = ratio_from_u(u, u_lo); }, 0.5, u_lo, u_hi);
}

void search_lambda1(StrategySearch& s)
{
    const auto& g = s.grids();
    s.line([](const Coords& c) { return std::log(c.lambda1); },
           [](Coords& c, double v) { c.lambda1 = std::exp(v); }, 0.25, std::log(g.lambda_min),
           std::log(g.lambda_max));
}

std::vector<double> ratio_grid(const SearchGrids& g)
{
    auto out = g.dlambda_ratio;
    if (g.include_hard_constraint) out.push_back(kInf);
    return out;
}

void run_search(StrategySearch& s, StrategyKind kind, double lambda1)
{
    const auto& g = s.grids();
    switch (kind) {
    case StrategyKind::trans_lasso:
        s.inner({lambda1, 0.0, 1.0, 0.0});
        break;
    case StrategyKind::dlambda_zero:
        for (double kappa : g.kappa) s.inner({lambda1, 0.0, kappa, 0.0});
        search_kappa(s);
        break;
    case StrategyKind::kappa_zero:
        for (double ratio : ratio_grid(g)) s.inner({lambda1, 0.0, 0.0, ratio});
        search_ratio(s);
        break;
    case StrategyKind::locally_optimal:
        if (g.include_hard_constraint)
            for (double kappa : g.kappa) s.inner({lambda1, 0.0, kappa, kInf});
        s.cyclic({[&] { search_kappa(s); }, [&] { search_ratio(s); }});
        break;
    case StrategyKind::globally_optimal:
        s.cyclic({[&] { search_lambda1(s); }, [&] { search_kappa(s); }, [&] { search_ratio(s); }});
        break;
    case StrategyKind::pretraining_path: {
        auto at = [lambda1](double sv) {
            return [lambda1, sv](double lambda2) {
                const auto [kappa, dlambda] = pretraining_path(sv, lambda2);
                return Hyperparams{lambda1, lambda2, kappa, dlambda};
            };
        };
        // lambda2 search for one s, reusing the inner machinery through an explicit family.
        auto inner_s = [&](double sv) {
            const auto family = at(std::clamp(sv, 0.0, 1.0));
            const double lo = std::log(g.lambda_min), hi = std::log(g.lambda_max);
            double x0 = std::log(s.best_value() < kInf ? s.best().lambda2 : std::sqrt(g.lambda_min * g.lambda_max));
            return line_minimize([&](double v) { return s.value(family(std::exp(v))); }, x0, 0.25, lo, hi,
                                 g.refine_tolerance)
                .value;
        };
        {
            // Coarse lambda2 grid at the first s value so the warm hint starts from a global view.
            const auto family = at(g.pretraining_s.front());
            for (double l2 : log_grid(g.lambda_min, g.lambda_max, g.lambda_points)) s.value(family(l2));
        }
        for (double sv : g.pretraining_s) inner_s(sv);
        const Coords b = s.best();
        line_minimize(inner_s, 1.0 - b.kappa, 0.1, 0.0, 1.0, g.refine_tolerance);
        break;
    }
    }
}

} // namespace

std::string_view to_string(StrategyKind kind)
{
    switch (kind) {
    case StrategyKind::kappa_zero: return "kappa_zero";
    case StrategyKind::dlambda_zero: return "dlambda_zero";
    case StrategyKind::locally_optimal: return "locally_optimal";
    case StrategyKind::globally_optimal: return "globally_optimal";
    case StrategyKind::trans_lasso: return "trans_lasso";
    case StrategyKind::pretraining_path: return "pretraining_path";
    }
    return "unknown";
}

StrategyKind strategy_from_string(std::string_view name)
{
    for (auto kind : all_strategies())
        if (to_string(kind) == name) return kind;
    throw std::invalid_argument("unknown strategy '" + std::string(name) + "'");
}

const std::vector<StrategyKind>& all_strategies()
{
    static const std::vector<StrategyKind> kinds{
        StrategyKind::kappa_zero,       StrategyKind::dlambda_zero, StrategyKind::locally_optimal,
        StrategyKind::globally_optimal, StrategyKind::trans_lasso,  StrategyKind::pretraining_path,
    };
    return kinds;
}

SearchGrids SearchGrids::defaults()
{
    SearchGrids g;
    for (int i = 0; i <= 15; ++i) g.kappa.push_back(i / 10.0);
    for (int i = 0; i <= 10; ++i) g.dlambda_ratio.push_back(i / 10.0);
    for (int i = 0; i <= 10; ++i) g.pretraining_s.push_back(i / 10.0);
    return g;
}

SearchGrids& SearchGrids::with_log_dlambda(int points, double lo, double hi)
{
    if (points < 1 || !(lo > 0.0) || !(hi >= lo)) throw std::invalid_argument("search grids: bad log dlambda grid");
    dlambda_ratio = {0.0};
    for (double v : log_grid(lo, hi, points)) dlambda_ratio.push_back(v);
    dlambda_ratio_max = std::max(dlambda_ratio_max, hi);
    return *this;
}

void SearchGrids::validate() const
{
    auto require = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("search grids: ") + what);
    };
    require(!kappa.empty() && !dlambda_ratio.empty() && !pretraining_s.empty(), "grids must be non-empty");
    for (double k : kappa) require(std::isfinite(k) && k >= 0.0, "kappa values must be finite and >= 0");
    for (double r : dlambda_ratio) require(std::isfinite(r) && r >= 0.0, "dlambda ratios must be finite and >= 0");
    for (double s : pretraining_s) require(s >= 0.0 && s <= 1.0, "s values must lie in [0, 1]");
    require(lambda_min > 0.0 && lambda_max > lambda_min && std::isfinite(lambda_max), "lambda bracket must be positive");
    require(lambda_points >= 2, "lambda_points must be >= 2");
    require(dlambda_ratio_max > 0.0 && std::isfinite(dlambda_ratio_max), "dlambda_ratio_max must be positive");
    require(refine_tolerance > 0.0 && improvement_tolerance >= 0.0, "tolerances must be positive");
    require(max_cycles >= 1, "max_cycles must be >= 1");
}

void TuningObjective::record_into(std::vector<TracePoint>* trace)
{
    recorder_ = trace;
    recorded_.clear();
}

double TuningObjective::value(const Hyperparams& hyper)
{
    const auto key = key_of(hyper);
    auto it = memo_.find(key);
    if (it == memo_.end()) {
        Entry e{kInf, true, {}};
        try {
            hyper.validate();
            const double v = compute(hyper);
            if (std::isfinite(v)) {
                e = {v, false, {}};
            } else {
                e.note = "non-finite objective";
            }
        } catch (const std::exception& ex) {
            e.note = ex.what();
        }
        it = memo_.emplace(key, std::move(e)).first;
    }
    if (recorder_ && recorded_.insert(key).second)
        recorder_->push_back({hyper, it->second.value, it->second.skipped, it->second.note});
    return it->second.value;
}

ReplicaObjective::ReplicaObjective(ProblemGeometry geometry, SolveOptions options)
    : geometry_(std::move(geometry)), options_(options)
{
}

const Theta1& ReplicaObjective::theta1(double lambda1)
{
    if (auto it = stage1_.find(lambda1); it != stage1_.end()) return it->second;
    const Theta1* warm = nullptr;
    double gap = kInf;
    for (const auto& [l, t] : stage1_) {
        const double d = std::abs(std::log(l / lambda1));
        if (d < gap) {
            gap = d;
            warm = &t;
        }
    }
    Theta1 t;
    try {
        t = solve_stage1(geometry_, lambda1, options_, warm);
    } catch (const ReplicaError&) {
        if (!warm) throw;
        t = solve_stage1(geometry_, lambda1, options_);
    }
    return stage1_.emplace(lambda1, std::move(t)).first->second;
}

double ReplicaObjective::compute(const Hyperparams& hyper)
{
    const Theta1& t1 = theta1(hyper.lambda1);
    const auto warm_it = last_stage2_.find(hyper.lambda1);
    const Theta2* warm = warm_it == last_stage2_.end() ? nullptr : &warm_it->second;
    Theta2 t2;
    try {
        t2 = solve_stage2(t1, geometry_, hyper, options_, warm);
    } catch (const ReplicaError&) {
        if (!warm) throw;
        t2 = solve_stage2(t1, geometry_, hyper, options_);
    }
    const double e = eps2(t1, t2, geometry_, hyper.kappa);
    last_stage2_[hyper.lambda1] = t2;
    stage2_[key_of(hyper)] = std::move(t2);
    return e;
}

ReplicaPoint ReplicaObjective::point(const Hyperparams& hyper)
{
    value(hyper);
    const auto it = stage2_.find(key_of(hyper));
    if (it == stage2_.end()) throw std::runtime_error("replica objective: no converged state at requested point");
    const Theta1& t1 = theta1(hyper.lambda1);
    return {t1, it->second, eps1(t1, geometry_), eps2(t1, it->second, geometry_, hyper.kappa)};
}

Lambda1Result tune_lambda1(const ProblemGeometry& geometry, const SearchGrids& grids, const SolveOptions& options)
{
    if (!(grids.lambda_min > 0.0 && grids.lambda_max > grids.lambda_min))
        throw std::invalid_argument("tune_lambda1: lambda bracket must be positive");
    Lambda1Result out;
    std::map<double, Theta1> solved;

    // Descending continuation: the zero estimator at large lambda1 is the natural start.
    auto grid = log_grid(grids.lambda_min, grids.lambda_max, std::max(grids.lambda_points, 2));
    std::reverse(grid.begin(), grid.end());
    std::vector<double> values(grid.size(), kInf);
    const Theta1* warm = nullptr;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        try {
            auto [it, _] = solved.emplace(grid[i], solve_stage1(geometry, grid[i], options, warm));
            values[i] = eps1(it->second, geometry);
            warm = &it->second;
        } catch (const ReplicaError&) {
            values[i] = kInf;
        }
        out.trace.emplace_back(grid[i], values[i]);
    }
    const auto arg = static_cast<std::size_t>(std::min_element(values.begin(), values.end()) - values.begin());
    if (!std::isfinite(values[arg])) throw ReplicaError(ReplicaError::Kind::non_convergence, "tune_lambda1: no grid point converged");

    int minima = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const bool left = i == 0 || values[i] < values[i - 1];
        const bool right = i + 1 == values.size() || values[i] <= values[i + 1];
        if (left && right && std::isfinite(values[i])) ++minima;
    }
    out.nonconvex = minima > 1;

    const Theta1& anchor = solved.at(grid[arg]);
    auto f = [&](double v) {
        const double l = std::exp(v);
        if (auto it = solved.find(l); it != solved.end()) return eps1(it->second, geometry);
        try {
            auto [it, _] = solved.emplace(l, solve_stage1(geometry, l, options, &anchor));
            const double e = eps1(it->second, geometry);
            out.trace.emplace_back(l, e);
            return e;
        } catch (const ReplicaError&) {
            out.trace.emplace_back(l, kInf);
            return kInf;
        }
    };
    const double lo = std::log(grid[std::min(arg + 1, grid.size() - 1)]);
    const double hi = std::log(grid[arg == 0 ? 0 : arg - 1]);
    double best_v = std::log(grid[arg]);
    double best_f = values[arg];
    if (hi > lo) {
        std::uintmax_t max_iter = 200;
        const auto r = boost::math::tools::brent_find_minima([&](double v) { return finite_or_large(f(v)); }, lo, hi,
                                                             brent_bits(grids.refine_tolerance), max_iter);
        if (r.second < best_f) {
            best_v = r.first;
            best_f = r.second;
        }
    }
    out.lambda1 = std::exp(best_v);
    if (best_f == values[arg]) out.lambda1 = grid[arg];
    out.theta1 = solved.at(out.lambda1);
    out.eps1 = eps1(out.theta1, geometry);
    return out;
}

TuningResult tune_stage2(TuningObjective& objective, StrategyKind kind, double lambda1, const SearchGrids& grids,
                         std::span<const TuningResult> seeds)
{
    grids.validate();
    if (!(lambda1 >= 0.0 && std::isfinite(lambda1))) throw std::invalid_argument("tune_stage2: lambda1 must be finite");
    TuningResult result;
    result.kind = kind;
    objective.record_into(&result.trace);
    try {
        StrategySearch search(objective, grids, result.trace);
        for (const auto& seed : seeds) search.value(seed.chosen);
        if (search.best_value() < kInf) search.set_hint(search.best().lambda2);
        run_search(search, kind, lambda1);
    } catch (...) {
        objective.record_into(nullptr);
        throw;
    }
    objective.record_into(nullptr);

    const auto* best = trace_minimum(result.trace);
    if (!best) throw std::runtime_error("tune_stage2: every evaluated point failed for " + std::string(to_string(kind)));
    result.chosen = best->hyper;
    result.objective = best->objective;
    result.skipped_points =
        static_cast<int>(std::count_if(result.trace.begin(), result.trace.end(), [](const TracePoint& p) { return p.skipped; }));
    if (auto* replica = dynamic_cast<ReplicaObjective*>(&objective)) result.state = replica->point(result.chosen);
    return result;
}

TracePoint tune_lambda2(TuningObjective& objective, const Hyperparams& fixed, const SearchGrids& grids)
{
    grids.validate();
    std::vector<TracePoint> trace;
    objective.record_into(&trace);
    auto f = [&](double v) {
        Hyperparams h = fixed;
        h.lambda2 = std::exp(v);
        return objective.value(h);
    };
    try {
        const auto grid = linear_grid(std::log(grids.lambda_min), std::log(grids.lambda_max), grids.lambda_points);
        std::size_t arg = 0;
        double fb = kInf;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const double v = f(grid[i]);
            if (v < fb) {
                fb = v;
                arg = i;
            }
        }
        line_minimize(f, grid[arg], grid[1] - grid[0], grid.front(), grid.back(), grids.refine_tolerance);
    } catch (...) {
        objective.record_into(nullptr);
        throw;
    }
    objective.record_into(nullptr);
    const auto* best = trace_minimum(trace);
    if (!best) {
        TracePoint failed{fixed, kInf, true, trace.empty() ? std::string("no evaluations") : trace.back().note};
        return failed;
    }
    return *best;
}

std::vector<StrategyKind> nested_strategies(StrategyKind kind)
{
    switch (kind) {
    case StrategyKind::dlambda_zero: return {StrategyKind::trans_lasso};
    case StrategyKind::locally_optimal: return {StrategyKind::kappa_zero, StrategyKind::dlambda_zero};
    case StrategyKind::globally_optimal: return {StrategyKind::locally_optimal};
    default: return {};
    }
}

namespace {

using ResultMap = std::map<StrategyKind, TuningResult>;

const TuningResult& ensure(ResultMap& done, TuningObjective& objective, StrategyKind kind, double lambda1,
                           const SearchGrids& grids)
{
    if (auto it = done.find(kind); it != done.end()) return it->second;
    std::vector<TuningResult> seeds;
    for (auto inner : nested_strategies(kind)) seeds.push_back(ensure(done, objective, inner, lambda1, grids));
    return done.emplace(kind, tune_stage2(objective, kind, lambda1, grids, seeds)).first->second;
}

} // namespace

std::vector<TuningResult> tune_strategies(TuningObjective& objective, std::span<const StrategyKind> kinds,
                                          double lambda1, const SearchGrids& grids)
{
    if (kinds.empty()) throw std::invalid_argument("tune_strategies: strategy list is empty");
    ResultMap done;
    std::vector<TuningResult> out;
    for (auto kind : kinds) out.push_back(ensure(done, objective, kind, lambda1, grids));
    return out;
}

std::vector<ComparisonRow> strategy_compare(const ProblemGeometry& geometry, std::span<const double> sigma_grid,
                                            std::span<const StrategyKind> kinds, const SearchGrids& grids,
                                            const SolveOptions& options, int workers)
{
    if (sigma_grid.empty()) throw std::invalid_argument("strategy_compare: sigma grid is empty");
    if (kinds.empty()) throw std::invalid_argument("strategy_compare: strategy list is empty");
    grids.validate();
    std::vector<std::vector<ComparisonRow>> per_sigma(sigma_grid.size());
    parallel_for(sigma_grid.size(), workers, [&](std::size_t i) {
        const double sigma = sigma_grid[i];
        const auto geom = geometry.with_sigma(std::vector<double>(geometry.num_classes(), sigma));
        const auto l1 = tune_lambda1(geom, grids, options);
        ReplicaObjective objective(geom, options);
        ResultMap done;
        for (auto kind : kinds) ensure(done, objective, kind, l1.lambda1, grids);
        auto eps_of = [&](StrategyKind k) {
            const auto it = done.find(k);
            return it == done.end() ? kNaN : it->second.objective;
        };
        const double lo = eps_of(StrategyKind::locally_optimal);
        const double simple = std::min(eps_of(StrategyKind::dlambda_zero), eps_of(StrategyKind::kappa_zero));
        for (auto kind : kinds) {
            const auto& r = done.at(kind);
            ComparisonRow row;
            row.sigma = sigma;
            row.kind = kind;
            row.eps2 = r.objective;
            row.hyper = r.chosen;
            row.ratio_best_simple = simple / lo;
            row.ratio_pretrain = eps_of(StrategyKind::pretraining_path) / lo;
            row.ratio_trans = eps_of(StrategyKind::trans_lasso) / lo;
            row.skipped_points = r.skipped_points;
            per_sigma[i].push_back(row);
        }
    });
    std::vector<ComparisonRow> out;
    for (auto& rows : per_sigma) out.insert(out.end(), rows.begin(), rows.end());
    return out;
}

std::vector<int> assign_folds(Eigen::Index rows, int folds, std::uint64_t seed, std::uint64_t stream)
{
    if (folds < 2) throw std::invalid_argument("assign_folds: folds must be >= 2");
    if (rows < folds) throw std::invalid_argument("assign_folds: fewer rows than folds");
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(rows));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    auto rng = make_stream(seed, streams::folds, stream);
    for (std::size_t i = perm.size(); i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(perm[i - 1], perm[pick(rng)]);
    }
    std::vector<int> labels(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) labels[static_cast<std::size_t>(perm[i])] = static_cast<int>(i % folds);
    return labels;
}

namespace {

Matrix select_rows(const MatrixView& m, const std::vector<Eigen::Index>& rows)
{
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
    return out;
}

Vector select_entries(const Vector& v, const std::vector<Eigen::Index>& rows)
{
    Vector out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[rows[i]];
    return out;
}

std::vector<DatasetView> views(const std::vector<Matrix>& designs, const std::vector<Vector>& responses)
{
    std::vector<DatasetView> out;
    for (std::size_t k = 0; k < designs.size(); ++k)
        if (designs[k].rows() > 0) out.push_back({view_of(designs[k]), &responses[k]});
    return out;
}

} // namespace

CvObjective::CvObjective(std::span<const DatasetView> datasets, const CvOptions& options) : options_(options)
{
    if (datasets.empty()) throw std::invalid_argument("cv: no datasets");
    if (options.folds < 2) throw std::invalid_argument("cv: folds must be >= 2");
    const Eigen::Index target_rows = datasets[0].design.rows();
    if (target_rows < options.folds)
        throw std::invalid_argument("cv: target dataset has " + std::to_string(target_rows) + " rows, fewer than " +
                                    std::to_string(options.folds) + " folds");
    const Eigen::Index cols = datasets[0].design.cols();
    for (const auto& d : datasets) {
        if (d.design.cols() != cols) throw std::invalid_argument("cv: datasets differ in column count");
        if (!d.response || d.response->size() != d.design.rows())
            throw std::invalid_argument("cv: response length does not match design rows");
    }

    const auto F = static_cast<std::size_t>(options.folds);
    held_out_.assign(datasets.size(), std::vector<std::vector<Eigen::Index>>(F));
    folds_.resize(F);
    for (std::size_t k = 0; k < datasets.size(); ++k) {
        const auto labels = assign_folds(datasets[k].design.rows(), options.folds, options.seed, k);
        std::vector<std::vector<Eigen::Index>> train(F);
        for (std::size_t r = 0; r < labels.size(); ++r) {
            const auto f = static_cast<std::size_t>(labels[r]);
            held_out_[k][f].push_back(static_cast<Eigen::Index>(r));
            for (std::size_t g = 0; g < F; ++g)
                if (g != f) train[g].push_back(static_cast<Eigen::Index>(r));
        }
        for (std::size_t f = 0; f < F; ++f) {
            folds_[f].train_designs.push_back(select_rows(datasets[k].design, train[f]));
            folds_[f].train_responses.push_back(select_entries(*datasets[k].response, train[f]));
            folds_[f].test_designs.push_back(select_rows(datasets[k].design, held_out_[k][f]));
            folds_[f].test_responses.push_back(select_entries(*datasets[k].response, held_out_[k][f]));
        }
    }
}

const std::vector<Eigen::Index>& CvObjective::held_out(std::size_t k, int f) const
{
    return held_out_.at(k).at(static_cast<std::size_t>(f));
}

const std::vector<Estimate>& CvObjective::stage1_fits(double lambda1)
{
    if (auto it = stage1_.find(lambda1); it != stage1_.end()) return it->second;
    std::vector<Estimate> fits;
    for (std::size_t f = 0; f < folds_.size(); ++f) {
        const auto data = views(folds_[f].train_designs, folds_[f].train_responses);
        const Estimate* warm = last_stage1_.empty() ? nullptr : &last_stage1_[f];
        fits.push_back(fit_pretraining(data, lambda1, options_.solver, warm).estimate);
    }
    last_stage1_ = fits;
    return stage1_.emplace(lambda1, std::move(fits)).first->second;
}

double CvObjective::stage1_cv_error(double lambda1)
{
    const auto& fits = stage1_fits(lambda1);
    double sse = 0.0;
    Eigen::Index rows = 0;
    for (std::size_t f = 0; f < folds_.size(); ++f) {
        for (std::size_t k = 0; k < folds_[f].test_designs.size(); ++k) {
            const auto& X = folds_[f].test_designs[k];
            if (X.rows() == 0) continue;
            sse += (folds_[f].test_responses[k] - X * fits[f].coefficients).squaredNorm();
            rows += X.rows();
        }
    }
    return sse / static_cast<double>(rows);
}

double CvObjective::compute(const Hyperparams& hyper)
{
    const auto& fits = stage1_fits(hyper.lambda1);
    if (last_stage2_.size() != folds_.size()) last_stage2_.assign(folds_.size(), Estimate{});
    double sse = 0.0;
    Eigen::Index rows = 0;
    for (std::size_t f = 0; f < folds_.size(); ++f) {
        const auto& fd = folds_[f];
        const DatasetView target{view_of(fd.train_designs[0]), &fd.train_responses[0]};
        const Estimate* warm = last_stage2_[f].coefficients.size() > 0 ? &last_stage2_[f] : nullptr;
        auto fit = fit_finetune(target, fits[f], hyper, options_.solver, warm);
        const Vector combined = hyper.kappa * fits[f].coefficients + fit.estimate.coefficients;
        sse += (fd.test_responses[0] - fd.test_designs[0] * combined).squaredNorm();
        rows += fd.test_designs[0].rows();
        last_stage2_[f] = std::move(fit.estimate);
    }
    return sse / static_cast<double>(rows);
}

double cv_lambda1(CvObjective& objective, const SearchGrids& grids)
{
    auto grid = linear_grid(std::log(grids.lambda_min), std::log(grids.lambda_max), std::max(grids.lambda_points, 2));
    std::reverse(grid.begin(), grid.end());
    auto f = [&](double v) {
        try {
            return objective.stage1_cv_error(std::exp(v));
        } catch (const NonConvergenceError&) {
            return kInf;
        }
    };
    std::size_t arg = 0;
    double fb = kInf;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double v = f(grid[i]);
        if (v < fb) {
            fb = v;
            arg = i;
        }
    }
    if (!std::isfinite(fb)) throw std::runtime_error("cv_lambda1: no lambda1 could be fitted");
    const double step = std::abs(grid[1] - grid[0]);
    const auto r = line_minimize(f, grid[arg], step, grid.back(), grid.front(), grids.refine_tolerance);
    return std::exp(r.x);
}

TuningResult cv_tune(std::span<const DatasetView> datasets, StrategyKind kind, const CvOptions& cv,
                     const SearchGrids& grids)
{
    grids.validate();
    CvObjective objective(datasets, cv);
    const double lambda1 = cv_lambda1(objective, grids);
    const StrategyKind kinds[] = {kind};
    return tune_strategies(objective, kinds, lambda1, grids).front();
}

} // namespace translasso
