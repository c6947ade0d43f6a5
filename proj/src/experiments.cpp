#include "translasso/experiments.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>
#include <yaml-cpp/yaml.h>

#include "translasso/parallel.hpp"
#include "translasso/rng.hpp"

namespace translasso {
namespace {

using ojson = nlohmann::ordered_json;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---- YAML helpers -------------------------------------------------------

std::string where(const YAML::Node& node)
{
    const auto mark = node.Mark();
    if (mark.is_null()) return {};
    return " (line " + std::to_string(mark.line + 1) + ")";
}

[[noreturn]] void fail(const YAML::Node& node, const std::string& field, const std::string& what)
{
    throw ConfigError("config field '" + field + "'" + where(node) + ": " + what);
}

void check_keys(const YAML::Node& node, const std::string& field, std::initializer_list<const char*> allowed)
{
    if (!node.IsMap()) fail(node, field, "expected a mapping");
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) fail(kv.first, field.empty() ? key : field + "." + key, "unknown key");
    }
}

std::string join(const std::string& parent, const char* key)
{
    return parent.empty() ? std::string(key) : parent + "." + key;
}

double to_double(const YAML::Node& node, const std::string& field, bool allow_inf = false)
{
    if (!node.IsScalar()) fail(node, field, "expected a number");
    const auto& s = node.Scalar();
    if (allow_inf && (s == "inf" || s == ".inf" || s == "hard")) return kHardConstraint;
    double v = 0.0;
    try {
        v = node.as<double>();
    } catch (const YAML::Exception&) {
        fail(node, field, "expected a number, got '" + s + "'");
    }
    if (!std::isfinite(v) && !(allow_inf && v == kHardConstraint)) fail(node, field, "must be finite");
    return v;
}

template <typename Int>
Int to_int(const YAML::Node& node, const std::string& field)
{
    if (!node.IsScalar()) fail(node, field, "expected an integer");
    try {
        return node.as<Int>();
    } catch (const YAML::Exception&) {
        fail(node, field, "expected an integer, got '" + node.Scalar() + "'");
    }
}

bool to_bool(const YAML::Node& node, const std::string& field)
{
    if (!node.IsScalar()) fail(node, field, "expected true or false");
    try {
        return node.as<bool>();
    } catch (const YAML::Exception&) {
        fail(node, field, "expected true or false, got '" + node.Scalar() + "'");
    }
}

std::string to_string_field(const YAML::Node& node, const std::string& field)
{
    if (!node.IsScalar()) fail(node, field, "expected a string");
    return node.Scalar();
}

/// A scalar is accepted as a one-element list.
std::vector<double> to_list(const YAML::Node& node, const std::string& field, bool allow_inf = false)
{
    std::vector<double> out;
    if (node.IsScalar()) {
        out.push_back(to_double(node, field, allow_inf));
    } else if (node.IsSequence()) {
        for (std::size_t i = 0; i < node.size(); ++i)
            out.push_back(to_double(node[i], field + "[" + std::to_string(i) + "]", allow_inf));
    } else {
        fail(node, field, "expected a number or a list of numbers");
    }
    return out;
}

template <typename F>
void if_present(const YAML::Node& parent, const char* key, F&& f)
{
    const auto node = parent[key];
    if (node) f(node);
}

void parse_geometry(const YAML::Node& node, ExperimentConfig& c)
{
    check_keys(node, "geometry", {"pi0", "pi", "alpha", "sigma"});
    double pi0 = c.geometry.pi0();
    std::vector<double> pi(c.geometry.pi().begin(), c.geometry.pi().end());
    std::vector<double> alpha(c.geometry.alpha().begin(), c.geometry.alpha().end());
    std::vector<double> sigma(c.geometry.sigma().begin(), c.geometry.sigma().end());
    if_present(node, "pi0", [&](const YAML::Node& n) { pi0 = to_double(n, "geometry.pi0"); });
    if_present(node, "pi", [&](const YAML::Node& n) { pi = to_list(n, "geometry.pi"); });
    if_present(node, "alpha", [&](const YAML::Node& n) { alpha = to_list(n, "geometry.alpha"); });
    bool sigma_scalar = false;
    if_present(node, "sigma", [&](const YAML::Node& n) {
        sigma = to_list(n, "geometry.sigma");
        sigma_scalar = n.IsScalar();
    });
    if (sigma_scalar || (sigma.size() == 1 && pi.size() > 1)) sigma.assign(pi.size(), sigma.front());
    try {
        c.geometry = ProblemGeometry(pi0, pi, alpha, sigma);
    } catch (const std::invalid_argument& e) {
        fail(node, "geometry", e.what());
    }
}

void parse_point(const YAML::Node& node, ExperimentConfig& c)
{
    check_keys(node, "point", {"lambda1", "lambda2", "kappa", "dlambda"});
    auto lam = [&](const char* key, std::optional<double>& slot) {
        if_present(node, key, [&](const YAML::Node& n) {
            if (n.IsScalar() && n.Scalar() == "auto")
                slot.reset();
            else
                slot = to_double(n, join("point", key));
        });
    };
    lam("lambda1", c.lambda1);
    lam("lambda2", c.lambda2);
    if_present(node, "kappa", [&](const YAML::Node& n) { c.kappa = to_double(n, "point.kappa"); });
    if_present(node, "dlambda", [&](const YAML::Node& n) { c.dlambda = to_double(n, "point.dlambda", true); });
}

void parse_sweep(const YAML::Node& node, ExperimentConfig& c)
{
    check_keys(node, "sweep", {"mode", "alpha1", "alpha2", "sigma", "kappa", "dlambda"});
    if_present(node, "mode", [&](const YAML::Node& n) {
        c.sweep_mode = to_string_field(n, "sweep.mode");
        if (c.sweep_mode != "hyperparams" && c.sweep_mode != "strategies")
            fail(n, "sweep.mode", "expected 'hyperparams' or 'strategies'");
    });
    auto grid = [&](const char* key, std::vector<double>& slot, bool allow_inf = false) {
        if_present(node, key, [&](const YAML::Node& n) {
            slot = to_list(n, join("sweep", key), allow_inf);
            if (slot.empty()) fail(n, join("sweep", key), "grid is empty");
        });
    };
    grid("alpha1", c.alpha1_grid);
    grid("alpha2", c.alpha2_grid);
    grid("sigma", c.sigma_grid);
    grid("kappa", c.kappa_grid);
    grid("dlambda", c.dlambda_grid, true);
}

void parse_simulate(const YAML::Node& node, ExperimentConfig& c)
{
    check_keys(node, "simulate", {"num_features", "realizations", "test_sets", "join_replica"});
    if_present(node, "num_features",
               [&](const YAML::Node& n) { c.num_features = to_int<std::size_t>(n, "simulate.num_features"); });
    if_present(node, "realizations",
               [&](const YAML::Node& n) { c.realizations = to_int<int>(n, "simulate.realizations"); });
    if_present(node, "test_sets", [&](const YAML::Node& n) { c.test_sets = to_int<int>(n, "simulate.test_sets"); });
    if_present(node, "join_replica",
               [&](const YAML::Node& n) { c.join_replica = to_bool(n, "simulate.join_replica"); });
    if (c.realizations < 2) fail(node, "simulate.realizations", "must be at least 2");
    if (c.test_sets < 0 || c.test_sets == 1) fail(node, "simulate.test_sets", "must be 0 (exact) or at least 2");
}

void parse_strategies(const YAML::Node& node, ExperimentConfig& c)
{
    check_keys(node, "strategies",
               {"list", "sigma", "kappa", "dlambda_ratio", "log_dlambda", "dlambda_ratio_max", "hard_constraint", "s",
                "lambda_min", "lambda_max", "lambda_points", "refine_tolerance", "improvement_tolerance",
                "max_cycles"});
    auto& g = c.grids;
    if_present(node, "list", [&](const YAML::Node& n) {
        if (!n.IsSequence()) fail(n, "strategies.list", "expected a list of strategy names");
        c.strategies.clear();
        for (std::size_t i = 0; i < n.size(); ++i) {
            const auto name = to_string_field(n[i], "strategies.list");
            try {
                c.strategies.push_back(strategy_from_string(name));
            } catch (const std::invalid_argument& e) {
                fail(n[i], "strategies.list", e.what());
            }
        }
        if (c.strategies.empty()) fail(n, "strategies.list", "strategy list is empty");
    });
    if_present(node, "sigma", [&](const YAML::Node& n) {
        c.sigma_grid = to_list(n, "strategies.sigma");
        if (c.sigma_grid.empty()) fail(n, "strategies.sigma", "grid is empty");
    });
    if_present(node, "kappa", [&](const YAML::Node& n) { g.kappa = to_list(n, "strategies.kappa"); });
    if_present(node, "dlambda_ratio",
               [&](const YAML::Node& n) { g.dlambda_ratio = to_list(n, "strategies.dlambda_ratio"); });
    if_present(node, "log_dlambda", [&](const YAML::Node& n) {
        check_keys(n, "strategies.log_dlambda", {"points", "lo", "hi"});
        int points = 21;
        double lo = 1e-2, hi = 10.0;
        if_present(n, "points", [&](const YAML::Node& m) { points = to_int<int>(m, "strategies.log_dlambda.points"); });
        if_present(n, "lo", [&](const YAML::Node& m) { lo = to_double(m, "strategies.log_dlambda.lo"); });
        if_present(n, "hi", [&](const YAML::Node& m) { hi = to_double(m, "strategies.log_dlambda.hi"); });
        try {
            g.with_log_dlambda(points, lo, hi);
        } catch (const std::invalid_argument& e) {
            fail(n, "strategies.log_dlambda", e.what());
        }
    });
    if_present(node, "dlambda_ratio_max",
               [&](const YAML::Node& n) { g.dlambda_ratio_max = to_double(n, "strategies.dlambda_ratio_max"); });
    if_present(node, "hard_constraint",
               [&](const YAML::Node& n) { g.include_hard_constraint = to_bool(n, "strategies.hard_constraint"); });
    if_present(node, "s", [&](const YAML::Node& n) { g.pretraining_s = to_list(n, "strategies.s"); });
    if_present(node, "lambda_min", [&](const YAML::Node& n) { g.lambda_min = to_double(n, "strategies.lambda_min"); });
    if_present(node, "lambda_max", [&](const YAML::Node& n) { g.lambda_max = to_double(n, "strategies.lambda_max"); });
    if_present(node, "lambda_points",
               [&](const YAML::Node& n) { g.lambda_points = to_int<int>(n, "strategies.lambda_points"); });
    if_present(node, "refine_tolerance",
               [&](const YAML::Node& n) { g.refine_tolerance = to_double(n, "strategies.refine_tolerance"); });
    if_present(node, "improvement_tolerance", [&](const YAML::Node& n) {
        g.improvement_tolerance = to_double(n, "strategies.improvement_tolerance");
    });
    if_present(node, "max_cycles", [&](const YAML::Node& n) { g.max_cycles = to_int<int>(n, "strategies.max_cycles"); });
    try {
        g.validate();
    } catch (const std::invalid_argument& e) {
        fail(node, "strategies", e.what());
    }
}

void parse_replica(const YAML::Node& node, ExperimentConfig& c)
{
    check_keys(node, "replica",
               {"damping", "min_damping", "tolerance", "max_iters", "hermite_nodes", "legendre_nodes", "field_cutoff",
                "cross_response", "method", "mc_samples"});
    auto& o = c.replica;
    if_present(node, "damping", [&](const YAML::Node& n) { o.damping = to_double(n, "replica.damping"); });
    if_present(node, "min_damping", [&](const YAML::Node& n) { o.min_damping = to_double(n, "replica.min_damping"); });
    if_present(node, "tolerance", [&](const YAML::Node& n) { o.tolerance = to_double(n, "replica.tolerance"); });
    if_present(node, "max_iters", [&](const YAML::Node& n) { o.max_iters = to_int<int>(n, "replica.max_iters"); });
    if_present(node, "hermite_nodes",
               [&](const YAML::Node& n) { o.expectation.hermite_nodes = to_int<int>(n, "replica.hermite_nodes"); });
    if_present(node, "legendre_nodes",
               [&](const YAML::Node& n) { o.expectation.legendre_nodes = to_int<int>(n, "replica.legendre_nodes"); });
    if_present(node, "field_cutoff",
               [&](const YAML::Node& n) { o.expectation.field_cutoff = to_double(n, "replica.field_cutoff"); });
    if_present(node, "mc_samples", [&](const YAML::Node& n) {
        o.expectation.mc_samples = to_int<std::int64_t>(n, "replica.mc_samples");
    });
    if_present(node, "method", [&](const YAML::Node& n) {
        const auto m = to_string_field(n, "replica.method");
        if (m == "quadrature")
            o.expectation.method = ExpectationMethod::quadrature;
        else if (m == "monte_carlo")
            o.expectation.method = ExpectationMethod::monte_carlo;
        else
            fail(n, "replica.method", "expected 'quadrature' or 'monte_carlo'");
    });
    if_present(node, "cross_response", [&](const YAML::Node& n) {
        const auto m = to_string_field(n, "replica.cross_response");
        if (m == "hold_stage2_field")
            o.cross_response = CrossResponse::hold_stage2_field;
        else if (m == "total")
            o.cross_response = CrossResponse::total;
        else
            fail(n, "replica.cross_response", "expected 'hold_stage2_field' or 'total'");
    });
    if (!(o.damping > 0.0 && o.damping <= 1.0)) fail(node, "replica.damping", "must lie in (0, 1]");
    if (!(o.tolerance > 0.0)) fail(node, "replica.tolerance", "must be positive");
    if (o.max_iters < 1) fail(node, "replica.max_iters", "must be positive");
    if (o.expectation.hermite_nodes < 2 || o.expectation.legendre_nodes < 2)
        fail(node, "replica", "node counts must be at least 2");
}

void parse_lasso(const YAML::Node& node, ExperimentConfig& c)
{
    check_keys(node, "lasso", {"tolerance", "max_iters", "anderson_memory", "screening"});
    if_present(node, "tolerance", [&](const YAML::Node& n) { c.lasso.tolerance = to_double(n, "lasso.tolerance"); });
    if_present(node, "max_iters", [&](const YAML::Node& n) { c.lasso.max_iters = to_int<int>(n, "lasso.max_iters"); });
    if_present(node, "anderson_memory",
               [&](const YAML::Node& n) { c.lasso.anderson_memory = to_int<int>(n, "lasso.anderson_memory"); });
    if_present(node, "screening", [&](const YAML::Node& n) { c.lasso.screening = to_bool(n, "lasso.screening"); });
    if (!(c.lasso.tolerance > 0.0)) fail(node, "lasso.tolerance", "must be positive");
}

void parse_realdata(const YAML::Node& node, ExperimentConfig& c, const std::filesystem::path& base)
{
    check_keys(node, "realdata",
               {"classes", "target", "response_column", "delimiter", "standardize", "strategy", "folds"});
    auto& r = c.realdata;
    if_present(node, "classes", [&](const YAML::Node& n) {
        if (!n.IsSequence() || n.size() == 0) fail(n, "realdata.classes", "expected a non-empty list");
        for (std::size_t i = 0; i < n.size(); ++i) {
            const auto field = "realdata.classes[" + std::to_string(i) + "]";
            check_keys(n[i], field, {"name", "train", "test"});
            ClassSource s;
            if (!n[i]["name"]) fail(n[i], field + ".name", "missing");
            if (!n[i]["train"]) fail(n[i], field + ".train", "missing");
            s.name = to_string_field(n[i]["name"], field + ".name");
            s.train = base / to_string_field(n[i]["train"], field + ".train");
            if (n[i]["test"]) s.test = base / to_string_field(n[i]["test"], field + ".test");
            r.classes.push_back(std::move(s));
        }
    });
    if_present(node, "target", [&](const YAML::Node& n) { r.target = to_string_field(n, "realdata.target"); });
    if_present(node, "response_column",
               [&](const YAML::Node& n) { r.load.response_column = to_string_field(n, "realdata.response_column"); });
    if_present(node, "delimiter", [&](const YAML::Node& n) {
        const auto d = to_string_field(n, "realdata.delimiter");
        if (d == "tab" || d == "\t")
            r.load.delimiter = '\t';
        else if (d == "comma" || d == ",")
            r.load.delimiter = ',';
        else if (d == "auto")
            r.load.delimiter = '\0';
        else
            fail(n, "realdata.delimiter", "expected 'comma', 'tab' or 'auto'");
    });
    if_present(node, "standardize",
               [&](const YAML::Node& n) { r.load.standardize = to_bool(n, "realdata.standardize"); });
    if_present(node, "strategy", [&](const YAML::Node& n) {
        try {
            r.strategy = strategy_from_string(to_string_field(n, "realdata.strategy"));
        } catch (const std::invalid_argument& e) {
            fail(n, "realdata.strategy", e.what());
        }
    });
    if_present(node, "folds", [&](const YAML::Node& n) {
        r.folds = to_int<int>(n, "realdata.folds");
        if (r.folds < 2) fail(n, "realdata.folds", "must be at least 2");
    });
    if (r.target.empty() && !r.classes.empty()) r.target = r.classes.front().name;
}

// ---- serialization ------------------------------------------------------

ojson number_or_null(double v)
{
    if (std::isnan(v)) return nullptr;
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

ojson list_json(std::span<const double> v)
{
    ojson a = ojson::array();
    for (double x : v) a.push_back(number_or_null(x));
    return a;
}

std::string format_double(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string cell_of(const ojson& v)
{
    if (v.is_null()) return {};
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
    if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
    if (v.is_number_float()) return format_double(v.get<double>());
    if (v.is_string()) return v.get<std::string>();
    if (v.is_array()) {
        std::string out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) out += ';';
            out += cell_of(v[i]);
        }
        return out;
    }
    return v.dump();
}

std::string csv_escape(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

ojson record_json(const SweepRecord& r)
{
    ojson j;
    j["mode"] = r.mode;
    j["content"] = r.content();
    j["code_version"] = kCodeVersion;
    j["config_hash"] = r.config_hash;
    j["seed"] = r.seed;
    j["strategy"] = r.strategy;
    j["pi"] = list_json(r.pi);
    j["alpha"] = list_json(r.alpha);
    j["sigma"] = list_json(r.sigma);
    j["lambda1"] = number_or_null(r.hyper.lambda1);
    j["lambda2"] = number_or_null(r.hyper.lambda2);
    j["kappa"] = number_or_null(r.hyper.kappa);
    j["dlambda"] = number_or_null(r.hyper.dlambda);

    const ReplicaPoint* p = r.replica ? &*r.replica : nullptr;
    auto rep = [&](auto get) { return p ? number_or_null(get(*p)) : ojson(nullptr); };
    j["eps1"] = rep([](const ReplicaPoint& x) { return x.eps1; });
    j["eps2"] = rep([](const ReplicaPoint& x) { return x.eps2; });
    j["q1"] = rep([](const ReplicaPoint& x) { return x.theta1.q1; });
    j["q1_hat"] = rep([](const ReplicaPoint& x) { return x.theta1.q1_hat; });
    j["chi1"] = rep([](const ReplicaPoint& x) { return x.theta1.chi1; });
    j["chi1_hat"] = rep([](const ReplicaPoint& x) { return x.theta1.chi1_hat; });
    j["m1"] = p ? list_json(p->theta1.m1) : ojson(nullptr);
    j["q2"] = rep([](const ReplicaPoint& x) { return x.theta2.q2; });
    j["q2_hat"] = rep([](const ReplicaPoint& x) { return x.theta2.q2_hat; });
    j["qr"] = rep([](const ReplicaPoint& x) { return x.theta2.qr; });
    j["qr_hat"] = rep([](const ReplicaPoint& x) { return x.theta2.qr_hat; });
    j["chi2"] = rep([](const ReplicaPoint& x) { return x.theta2.chi2; });
    j["chi2_hat"] = rep([](const ReplicaPoint& x) { return x.theta2.chi2_hat; });
    j["chir"] = rep([](const ReplicaPoint& x) { return x.theta2.chir; });
    j["chir_hat"] = rep([](const ReplicaPoint& x) { return x.theta2.chir_hat; });
    j["m2"] = p ? list_json(p->theta2.m2) : ojson(nullptr);
    j["variance_clipped"] = p ? ojson(p->theta2.variance_clipped) : ojson(nullptr);
    j["iterations1"] = p ? ojson(p->theta1.info.iterations) : ojson(nullptr);
    j["residual1"] = rep([](const ReplicaPoint& x) { return x.theta1.info.residual; });
    j["iterations2"] = p ? ojson(p->theta2.info.iterations) : ojson(nullptr);
    j["residual2"] = rep([](const ReplicaPoint& x) { return x.theta2.info.residual; });

    const EmpiricalSummary* e = r.empirical ? &*r.empirical : nullptr;
    auto emp = [&](auto get) { return e ? number_or_null(get(*e)) : ojson(nullptr); };
    auto means = [&](const std::vector<MeanWithError>& v) {
        std::vector<double> m;
        for (const auto& x : v) m.push_back(x.mean);
        return list_json(m);
    };
    j["emp_eps1_mean"] = emp([](const EmpiricalSummary& x) { return x.eps1.mean; });
    j["emp_eps1_se"] = emp([](const EmpiricalSummary& x) { return x.eps1.std_error; });
    j["emp_eps2_mean"] = emp([](const EmpiricalSummary& x) { return x.eps2.mean; });
    j["emp_eps2_se"] = emp([](const EmpiricalSummary& x) { return x.eps2.std_error; });
    j["emp_q1"] = emp([](const EmpiricalSummary& x) { return x.q1.mean; });
    j["emp_q2"] = emp([](const EmpiricalSummary& x) { return x.q2.mean; });
    j["emp_qr"] = emp([](const EmpiricalSummary& x) { return x.qr.mean; });
    j["emp_m1"] = e ? means(e->m1) : ojson(nullptr);
    j["emp_m2"] = e ? means(e->m2) : ojson(nullptr);
    j["realizations"] = e ? ojson(e->realizations) : ojson(nullptr);
    j["failed_realizations"] = e ? ojson(e->failures) : ojson(nullptr);

    j["ratio_best_simple"] = number_or_null(r.ratio_best_simple);
    j["ratio_pretrain"] = number_or_null(r.ratio_pretrain);
    j["ratio_trans"] = number_or_null(r.ratio_trans);
    j["skipped"] = r.skipped;
    j["note"] = r.note;
    return j;
}

std::uint64_t fnv1a(const std::string& s)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// ---- run helpers --------------------------------------------------------

std::vector<double> geometry_pi(const ProblemGeometry& g)
{
    std::vector<double> out{g.pi0()};
    out.insert(out.end(), g.pi().begin(), g.pi().end());
    return out;
}

SweepRecord base_record(const ExperimentConfig& c, const std::string& mode, const ProblemGeometry& g)
{
    SweepRecord r;
    r.mode = mode;
    r.config_hash = config_hash(c);
    r.seed = c.seed;
    r.pi = geometry_pi(g);
    r.alpha.assign(g.alpha().begin(), g.alpha().end());
    r.sigma.assign(g.sigma().begin(), g.sigma().end());
    return r;
}

/// Geometries of the (alpha1, alpha2, sigma) sweep axes; unset axes keep the base value.
std::vector<ProblemGeometry> geometry_axes(const ExperimentConfig& c, bool include_sigma)
{
    const auto& g = c.geometry;
    std::vector<double> a1 = c.alpha1_grid.empty() ? std::vector<double>{g.alpha()[0]} : c.alpha1_grid;
    std::vector<double> a2;
    if (g.num_classes() >= 2) a2 = c.alpha2_grid.empty() ? std::vector<double>{g.alpha()[1]} : c.alpha2_grid;
    else if (!c.alpha2_grid.empty()) throw ConfigError("config field 'sweep.alpha2': geometry has a single class");
    else a2 = {kNaN};
    std::vector<double> sig = (include_sigma && !c.sigma_grid.empty()) ? c.sigma_grid : std::vector<double>{kNaN};

    std::vector<ProblemGeometry> out;
    for (double x1 : a1)
        for (double x2 : a2)
            for (double s : sig) {
                std::vector<double> alpha(g.alpha().begin(), g.alpha().end());
                alpha[0] = x1;
                if (!std::isnan(x2)) alpha[1] = x2;
                ProblemGeometry h = g.with_alpha(alpha);
                if (!std::isnan(s)) h = h.with_sigma(std::vector<double>(g.num_classes(), s));
                out.push_back(std::move(h));
            }
    return out;
}

std::vector<std::pair<double, double>> point_axes(const ExperimentConfig& c)
{
    const auto ks = c.kappa_grid.empty() ? std::vector<double>{c.kappa} : c.kappa_grid;
    const auto ds = c.dlambda_grid.empty() ? std::vector<double>{c.dlambda} : c.dlambda_grid;
    std::vector<std::pair<double, double>> out;
    for (double k : ks)
        for (double d : ds) out.emplace_back(k, d);
    return out;
}

Hyperparams base_hyper(const ExperimentConfig& c, double kappa, double dlambda)
{
    return {c.lambda1.value_or(0.0), c.lambda2.value_or(0.0), kappa, dlambda};
}

void check_simulation_feasible(const ProblemGeometry& g, std::size_t n)
{
    std::size_t total = 0;
    for (std::size_t b = 0; b <= g.num_classes(); ++b) total += support_size(g.block_fraction(b), n);
    if (total > n)
        throw ConfigError("config field 'simulate.num_features': N=" + std::to_string(n) + " is below the " +
                          std::to_string(total) + " support entries the geometry needs");
    for (double a : g.alpha())
        if (std::llround(a * static_cast<double>(n)) < 1)
            throw ConfigError("config field 'simulate.num_features': N=" + std::to_string(n) +
                              " leaves a class with no samples");
}

} // namespace

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& origin)
{
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw ConfigError("config " + origin.string() + " line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
    }
    ExperimentConfig c;
    if (!root || root.IsNull()) return c;
    check_keys(root, "", {"seed", "geometry", "point", "sweep", "simulate", "strategies", "replica", "lasso", "realdata"});
    if_present(root, "seed", [&](const YAML::Node& n) { c.seed = to_int<std::uint64_t>(n, "seed"); });
    if_present(root, "geometry", [&](const YAML::Node& n) { parse_geometry(n, c); });
    if_present(root, "point", [&](const YAML::Node& n) { parse_point(n, c); });
    if_present(root, "sweep", [&](const YAML::Node& n) { parse_sweep(n, c); });
    if_present(root, "simulate", [&](const YAML::Node& n) { parse_simulate(n, c); });
    if_present(root, "strategies", [&](const YAML::Node& n) { parse_strategies(n, c); });
    if_present(root, "replica", [&](const YAML::Node& n) { parse_replica(n, c); });
    if_present(root, "lasso", [&](const YAML::Node& n) { parse_lasso(n, c); });
    const auto base = origin.empty() ? std::filesystem::path{} : origin.parent_path();
    if_present(root, "realdata", [&](const YAML::Node& n) { parse_realdata(n, c, base); });
    try {
        Hyperparams h = base_hyper(c, c.kappa, c.dlambda);
        h.validate();
        for (double k : c.kappa_grid) Hyperparams{0, 0, k, 0}.validate();
        for (double d : c.dlambda_grid) Hyperparams{0, 0, 0, d}.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path);
}

std::string resolved_config_json(const ExperimentConfig& c)
{
    ojson j;
    j["seed"] = c.seed;
    j["geometry"] = {{"pi0", c.geometry.pi0()},
                     {"pi", list_json(c.geometry.pi())},
                     {"alpha", list_json(c.geometry.alpha())},
                     {"sigma", list_json(c.geometry.sigma())}};
    j["point"] = {{"lambda1", c.lambda1 ? ojson(*c.lambda1) : ojson("auto")},
                  {"lambda2", c.lambda2 ? ojson(*c.lambda2) : ojson("auto")},
                  {"kappa", c.kappa},
                  {"dlambda", number_or_null(c.dlambda)}};
    j["sweep"] = {{"mode", c.sweep_mode},          {"alpha1", list_json(c.alpha1_grid)},
                  {"alpha2", list_json(c.alpha2_grid)}, {"sigma", list_json(c.sigma_grid)},
                  {"kappa", list_json(c.kappa_grid)},   {"dlambda", list_json(c.dlambda_grid)}};
    j["simulate"] = {{"num_features", c.num_features},
                     {"realizations", c.realizations},
                     {"test_sets", c.test_sets},
                     {"join_replica", c.join_replica}};
    ojson names = ojson::array();
    for (auto k : c.strategies) names.push_back(std::string(to_string(k)));
    const auto& g = c.grids;
    j["strategies"] = {{"list", names},
                       {"kappa", list_json(g.kappa)},
                       {"dlambda_ratio", list_json(g.dlambda_ratio)},
                       {"dlambda_ratio_max", g.dlambda_ratio_max},
                       {"hard_constraint", g.include_hard_constraint},
                       {"s", list_json(g.pretraining_s)},
                       {"lambda_min", g.lambda_min},
                       {"lambda_max", g.lambda_max},
                       {"lambda_points", g.lambda_points},
                       {"refine_tolerance", g.refine_tolerance},
                       {"improvement_tolerance", g.improvement_tolerance},
                       {"max_cycles", g.max_cycles}};
    const auto& o = c.replica;
    j["replica"] = {{"damping", o.damping},
                    {"min_damping", o.min_damping},
                    {"tolerance", o.tolerance},
                    {"max_iters", o.max_iters},
                    {"method", o.expectation.method == ExpectationMethod::quadrature ? "quadrature" : "monte_carlo"},
                    {"hermite_nodes", o.expectation.hermite_nodes},
                    {"legendre_nodes", o.expectation.legendre_nodes},
                    {"field_cutoff", o.expectation.field_cutoff},
                    {"mc_samples", o.expectation.mc_samples},
                    {"cross_response",
                     o.cross_response == CrossResponse::hold_stage2_field ? "hold_stage2_field" : "total"}};
    j["lasso"] = {{"tolerance", c.lasso.tolerance},
                  {"max_iters", c.lasso.max_iters},
                  {"anderson_memory", c.lasso.anderson_memory},
                  {"screening", c.lasso.screening}};
    ojson classes = ojson::array();
    for (const auto& s : c.realdata.classes)
        classes.push_back({{"name", s.name},
                           {"train", s.train.string()},
                           {"test", s.test ? ojson(s.test->string()) : ojson(nullptr)}});
    const char delim[2] = {c.realdata.load.delimiter, '\0'};
    j["realdata"] = {{"classes", classes},
                     {"target", c.realdata.target},
                     {"response_column", c.realdata.load.response_column},
                     {"delimiter", c.realdata.load.delimiter == '\0' ? std::string("auto") : std::string(delim)},
                     {"standardize", c.realdata.load.standardize},
                     {"strategy", std::string(to_string(c.realdata.strategy))},
                     {"folds", c.realdata.folds}};
    return j.dump(2);
}

std::string config_hash(const ExperimentConfig& config)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(resolved_config_json(config))));
    return buf;
}

std::string SweepRecord::content() const
{
    if (replica && empirical) return "both";
    if (empirical) return "empirical";
    return "replica";
}

const std::vector<std::string>& record_columns()
{
    static const std::vector<std::string> columns = [] {
        std::vector<std::string> out;
        const ojson probe = record_json(SweepRecord{});
        for (const auto& [key, _] : probe.items()) out.push_back(key);
        return out;
    }();
    return columns;
}

std::vector<std::string> record_cells(const SweepRecord& record)
{
    std::vector<std::string> out;
    const ojson j = record_json(record);
    for (const auto& [_, value] : j.items()) out.push_back(cell_of(value));
    return out;
}

std::string format_records(std::span<const SweepRecord> records, OutputFormat format)
{
    if (format == OutputFormat::json) {
        ojson a = ojson::array();
        for (const auto& r : records) a.push_back(record_json(r));
        return a.dump(2) + "\n";
    }
    std::string out;
    const auto& cols = record_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
    out += '\n';
    for (const auto& r : records) {
        const auto cells = record_cells(r);
        for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + csv_escape(cells[i]);
        out += '\n';
    }
    return out;
}

void write_records(const std::filesystem::path& path, std::span<const SweepRecord> records, OutputFormat format)
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << format_records(records, format);
}

std::vector<EmpiricalSummary> simulate_points(const ProblemGeometry& geometry, std::size_t num_features,
                                              std::span<const Hyperparams> points, int realizations, int test_sets,
                                              std::uint64_t seed, const SolverOptions& solver, int workers)
{
    if (realizations < 2) throw std::invalid_argument("simulate_points: need at least 2 realizations");
    struct Sample
    {
        bool ok = false;
        double eps1 = 0.0, eps2 = 0.0;
        EmpiricalOrderParams order;
    };
    const auto R = static_cast<std::size_t>(realizations);
    std::vector<std::vector<Sample>> samples(R, std::vector<Sample>(points.size()));

    parallel_for(R, workers, [&](std::size_t r) {
        const auto inst = generate_instance(geometry, num_features, stream_seed(seed, streams::realization, r));
        const auto data = inst.datasets();
        std::map<double, std::optional<Estimate>> stage1;
        std::map<double, Estimate> last_stage2;
        for (std::size_t p = 0; p < points.size(); ++p) {
            const auto& h = points[p];
            auto it = stage1.find(h.lambda1);
            if (it == stage1.end()) {
                std::optional<Estimate> fit;
                try {
                    fit = fit_pretraining(data, h.lambda1, solver).estimate;
                } catch (const NonConvergenceError&) {
                }
                it = stage1.emplace(h.lambda1, std::move(fit)).first;
            }
            if (!it->second) continue;
            const Estimate& x1 = *it->second;
            try {
                const auto warm = last_stage2.find(h.lambda1);
                auto x2 = fit_finetune(data.front(), x1, h, solver, warm == last_stage2.end() ? nullptr : &warm->second)
                              .estimate;
                Sample& s = samples[r][p];
                if (test_sets == 0) {
                    const auto g = conditional_gen_error(x1, &x2, inst.truth, geometry, h);
                    s.eps1 = g.first;
                    s.eps2 = g.second;
                } else {
                    const auto g = empirical_test_error(inst, x1, x2, h, test_sets,
                                                        stream_seed(seed, streams::test_sets, r));
                    s.eps1 = g.first.mean;
                    s.eps2 = g.second.mean;
                }
                s.order = empirical_order_params(inst, x1, x2);
                s.ok = true;
                last_stage2[h.lambda1] = std::move(x2);
            } catch (const NonConvergenceError&) {
            }
        }
    });

    auto summarize = [](const std::vector<double>& v) {
        MeanWithError m;
        if (v.empty()) return MeanWithError{kNaN, kNaN};
        double sum = 0.0;
        for (double x : v) sum += x;
        m.mean = sum / static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - m.mean) * (x - m.mean);
        m.std_error = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size())) : kNaN;
        return m;
    };

    std::vector<EmpiricalSummary> out(points.size());
    for (std::size_t p = 0; p < points.size(); ++p) {
        std::vector<double> e1, e2, q1, q2, qr;
        std::vector<std::vector<double>> m1, m2;
        int failures = 0;
        for (std::size_t r = 0; r < R; ++r) {
            const auto& s = samples[r][p];
            if (!s.ok) {
                ++failures;
                continue;
            }
            e1.push_back(s.eps1);
            e2.push_back(s.eps2);
            q1.push_back(s.order.q1);
            q2.push_back(s.order.q2);
            qr.push_back(s.order.qr);
            m1.resize(s.order.m1.size());
            m2.resize(s.order.m2.size());
            for (std::size_t b = 0; b < s.order.m1.size(); ++b) m1[b].push_back(s.order.m1[b]);
            for (std::size_t b = 0; b < s.order.m2.size(); ++b) m2[b].push_back(s.order.m2[b]);
        }
        auto& o = out[p];
        o.eps1 = summarize(e1);
        o.eps2 = summarize(e2);
        o.q1 = summarize(q1);
        o.q2 = summarize(q2);
        o.qr = summarize(qr);
        for (const auto& v : m1) o.m1.push_back(summarize(v));
        for (const auto& v : m2) o.m2.push_back(summarize(v));
        o.realizations = static_cast<int>(e1.size());
        o.failures = failures;
    }
    return out;
}

Hyperparams resolve_hyperparams(const ProblemGeometry& geometry, const Hyperparams& base, bool tune_lambda1_flag,
                                bool tune_lambda2_flag, const SearchGrids& grids, const SolveOptions& options)
{
    Hyperparams h = base;
    if (tune_lambda1_flag) h.lambda1 = tune_lambda1(geometry, grids, options).lambda1;
    if (tune_lambda2_flag) {
        ReplicaObjective objective(geometry, options);
        const auto best = tune_lambda2(objective, h, grids);
        if (best.skipped) throw ReplicaError(ReplicaError::Kind::non_convergence, "lambda2 tuning failed: " + best.note);
        h.lambda2 = best.hyper.lambda2;
    }
    return h;
}

std::vector<SweepRecord> cmd_replica_solve(const ExperimentConfig& config)
{
    const auto& g = config.geometry;
    const Hyperparams h = resolve_hyperparams(g, base_hyper(config, config.kappa, config.dlambda),
                                              !config.lambda1, !config.lambda2, config.grids, config.replica);
    SweepRecord r = base_record(config, "replica-solve", g);
    r.hyper = h;
    r.replica = solve_point(g, h, config.replica);
    return {r};
}

std::vector<SweepRecord> cmd_sweep(const ExperimentConfig& config, int workers)
{
    if (config.sweep_mode == "strategies") {
        std::vector<SweepRecord> out;
        const auto geoms = geometry_axes(config, false);
        const auto sigmas = config.sigma_grid.empty() ? std::vector<double>{config.geometry.sigma()[0]} : config.sigma_grid;
        std::vector<std::vector<SweepRecord>> per(geoms.size());
        parallel_for(geoms.size(), workers, [&](std::size_t i) {
            const auto rows = strategy_compare(geoms[i], sigmas, config.strategies, config.grids, config.replica, 1);
            for (const auto& row : rows) {
                auto g = geoms[i].with_sigma(std::vector<double>(geoms[i].num_classes(), row.sigma));
                SweepRecord r = base_record(config, "sweep", g);
                r.strategy = std::string(to_string(row.kind));
                r.hyper = row.hyper;
                r.replica = ReplicaPoint{};
                r.replica->eps2 = row.eps2;
                try {
                    r.replica = solve_point(g, row.hyper, config.replica);
                } catch (const ReplicaError& e) {
                    r.skipped = true;
                    r.note = e.what();
                }
                r.ratio_best_simple = row.ratio_best_simple;
                r.ratio_pretrain = row.ratio_pretrain;
                r.ratio_trans = row.ratio_trans;
                if (row.skipped_points > 0 && r.note.empty())
                    r.note = std::to_string(row.skipped_points) + " search points skipped";
                per[i].push_back(std::move(r));
            }
        });
        for (auto& v : per) out.insert(out.end(), v.begin(), v.end());
        return out;
    }

    const auto geoms = geometry_axes(config, true);
    const auto axes = point_axes(config);
    std::vector<std::vector<SweepRecord>> per(geoms.size());
    parallel_for(geoms.size(), workers, [&](std::size_t i) {
        const auto& g = geoms[i];
        double lambda1 = config.lambda1.value_or(0.0);
        std::string lambda1_error;
        if (!config.lambda1) {
            try {
                lambda1 = tune_lambda1(g, config.grids, config.replica).lambda1;
            } catch (const ReplicaError& e) {
                lambda1_error = e.what();
            }
        }
        ReplicaObjective objective(g, config.replica);
        for (const auto& [kappa, dlambda] : axes) {
            SweepRecord r = base_record(config, "sweep", g);
            r.hyper = {lambda1, config.lambda2.value_or(0.0), kappa, dlambda};
            if (!lambda1_error.empty()) {
                r.skipped = true;
                r.note = lambda1_error;
                per[i].push_back(std::move(r));
                continue;
            }
            try {
                if (!config.lambda2) {
                    const auto best = tune_lambda2(objective, r.hyper, config.grids);
                    if (best.skipped) throw ReplicaError(ReplicaError::Kind::non_convergence, best.note);
                    r.hyper.lambda2 = best.hyper.lambda2;
                }
                r.replica = objective.point(r.hyper);
            } catch (const std::exception& e) {
                r.skipped = true;
                r.note = e.what();
            }
            per[i].push_back(std::move(r));
        }
    });
    std::vector<SweepRecord> out;
    for (auto& v : per) out.insert(out.end(), v.begin(), v.end());
    return out;
}

std::vector<SweepRecord> cmd_simulate(const ExperimentConfig& config, int workers)
{
    const auto geoms = geometry_axes(config, true);
    for (const auto& g : geoms) check_simulation_feasible(g, config.num_features);
    const auto axes = point_axes(config);
    std::vector<SweepRecord> out;
    for (const auto& g : geoms) {
        // Tuned lambdas come from the replica prediction, so simulation and theory share hyperparameters.
        std::vector<Hyperparams> points;
        std::vector<std::optional<ReplicaPoint>> theory;
        std::vector<std::string> notes;
        std::optional<double> lambda1 = config.lambda1;
        if (!lambda1) lambda1 = tune_lambda1(g, config.grids, config.replica).lambda1;
        ReplicaObjective objective(g, config.replica);
        for (const auto& [kappa, dlambda] : axes) {
            Hyperparams h{*lambda1, config.lambda2.value_or(0.0), kappa, dlambda};
            std::optional<ReplicaPoint> rp;
            std::string note;
            try {
                if (!config.lambda2) {
                    const auto best = tune_lambda2(objective, h, config.grids);
                    if (best.skipped) throw ReplicaError(ReplicaError::Kind::non_convergence, best.note);
                    h.lambda2 = best.hyper.lambda2;
                }
                if (config.join_replica) rp = objective.point(h);
            } catch (const ReplicaError& e) {
                note = std::string("replica: ") + e.what();
            }
            points.push_back(h);
            theory.push_back(std::move(rp));
            notes.push_back(std::move(note));
        }
        const auto sims = simulate_points(g, config.num_features, points, config.realizations, config.test_sets,
                                          config.seed, config.lasso, workers);
        for (std::size_t p = 0; p < points.size(); ++p) {
            SweepRecord r = base_record(config, "simulate", g);
            r.hyper = points[p];
            r.empirical = sims[p];
            r.replica = theory[p];
            r.note = notes[p];
            if (sims[p].failures > 0) {
                if (!r.note.empty()) r.note += "; ";
                r.note += std::to_string(sims[p].failures) + " realizations failed";
            }
            r.skipped = sims[p].realizations == 0;
            out.push_back(std::move(r));
        }
    }
    return out;
}

std::vector<SweepRecord> cmd_strategies(const ExperimentConfig& config, int workers)
{
    if (config.strategies.empty()) throw ConfigError("config field 'strategies.list': strategy list is empty");
    const auto& g = config.geometry;
    const auto sigmas = config.sigma_grid.empty() ? std::vector<double>{g.sigma()[0]} : config.sigma_grid;
    const auto rows = strategy_compare(g, sigmas, config.strategies, config.grids, config.replica, workers);
    std::vector<SweepRecord> out;
    for (const auto& row : rows) {
        const auto gs = g.with_sigma(std::vector<double>(g.num_classes(), row.sigma));
        SweepRecord r = base_record(config, "strategies", gs);
        r.strategy = std::string(to_string(row.kind));
        r.hyper = row.hyper;
        r.replica = solve_point(gs, row.hyper, config.replica);
        r.ratio_best_simple = row.ratio_best_simple;
        r.ratio_pretrain = row.ratio_pretrain;
        r.ratio_trans = row.ratio_trans;
        if (row.skipped_points > 0) r.note = std::to_string(row.skipped_points) + " search points skipped";
        out.push_back(std::move(r));
    }
    return out;
}

RealDataRun cmd_realdata(const ExperimentConfig& config)
{
    const auto& rd = config.realdata;
    if (rd.classes.empty()) throw ConfigError("config field 'realdata.classes': no classes given");
    RealDataRun run;
    run.data = load_classes(rd.classes, rd.load);
    CvOptions cv;
    cv.folds = rd.folds;
    cv.seed = config.seed;
    cv.solver = config.lasso;
    run.result = run_pipeline(run.data, rd.target, rd.strategy, cv, config.grids);
    return run;
}

void write_realdata_outputs(const std::filesystem::path& out_dir, const ExperimentConfig& config, const RealDataRun& run)
{
    const auto& res = run.result;
    ojson report;
    report["code_version"] = kCodeVersion;
    report["config_hash"] = config_hash(config);
    report["seed"] = config.seed;
    report["target"] = res.target;
    report["strategy"] = std::string(to_string(res.tuning.kind));
    report["lambda1"] = res.hyper.lambda1;
    report["lambda2"] = res.hyper.lambda2;
    report["kappa"] = res.hyper.kappa;
    report["dlambda"] = number_or_null(res.hyper.dlambda);
    report["cv_error"] = res.tuning.objective;
    report["cv_points"] = res.tuning.trace.size();
    report["cv_skipped_points"] = res.tuning.skipped_points;
    report["first_stage_support"] = res.first_stage.support().size();
    report["second_stage_support"] = res.second_stage.support().size();
    report["test_rows"] = res.test.rows;
    report["test_mse"] = res.test.rows > 0 ? ojson(res.test.mse) : ojson(nullptr);
    report["test_mse_jackknife_se"] = res.test.rows > 0 ? ojson(res.test.jackknife_se) : ojson(nullptr);
    report["standardized"] = run.data.standardization.has_value();
    {
        std::ofstream out(out_dir / "report.json");
        if (!out) throw std::runtime_error("cannot write report.json");
        out << report.dump(2) << '\n';
    }
    const Vector coef = run.data.standardization ? run.data.standardization->to_original_scale(res.coefficients)
                                                 : res.coefficients;
    write_coefficients(out_dir / "coefficients.csv", run.data.feature_names, coef);
}

} // namespace translasso
