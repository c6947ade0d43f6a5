#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "translasso/experiments.hpp"

namespace py = pybind11;
using namespace translasso;

namespace {

py::dict point_dict(const ReplicaPoint& p)
{
    py::dict d;
    d["eps1"] = p.eps1;
    d["eps2"] = p.eps2;
    d["q1"] = p.theta1.q1;
    d["chi1"] = p.theta1.chi1;
    d["m1"] = p.theta1.m1;
    d["q1_hat"] = p.theta1.q1_hat;
    d["chi1_hat"] = p.theta1.chi1_hat;
    d["m1_hat"] = p.theta1.m1_hat;
    d["q2"] = p.theta2.q2;
    d["qr"] = p.theta2.qr;
    d["chi2"] = p.theta2.chi2;
    d["chir"] = p.theta2.chir;
    d["m2"] = p.theta2.m2;
    d["q2_hat"] = p.theta2.q2_hat;
    d["qr_hat"] = p.theta2.qr_hat;
    d["chi2_hat"] = p.theta2.chi2_hat;
    d["chir_hat"] = p.theta2.chir_hat;
    d["m2_hat"] = p.theta2.m2_hat;
    d["iterations1"] = p.theta1.info.iterations;
    d["iterations2"] = p.theta2.info.iterations;
    return d;
}

std::vector<DatasetView> views(const std::vector<Matrix>& designs, const std::vector<Vector>& responses)
{
    if (designs.size() != responses.size()) throw std::invalid_argument("one response per design is required");
    std::vector<DatasetView> v;
    for (std::size_t k = 0; k < designs.size(); ++k) v.push_back({view_of(designs[k]), &responses[k]});
    return v;
}

SolverOptions solver(double tolerance)
{
    SolverOptions o;
    o.tolerance = tolerance;
    return o;
}

} // namespace

PYBIND11_MODULE(_translasso, m)
{
    m.attr("__version__") = kCodeVersion;
    m.attr("HARD_CONSTRAINT") = kHardConstraint;

    py::class_<ProblemGeometry>(m, "ProblemGeometry")
        .def(py::init<double, std::vector<double>, std::vector<double>, std::vector<double>>(), py::arg("pi0"),
             py::arg("pi"), py::arg("alpha"), py::arg("sigma"))
        .def_property_readonly("pi0", &ProblemGeometry::pi0)
        .def_property_readonly("pi", [](const ProblemGeometry& g) { return std::vector<double>(g.pi().begin(), g.pi().end()); })
        .def_property_readonly("alpha",
                               [](const ProblemGeometry& g) { return std::vector<double>(g.alpha().begin(), g.alpha().end()); })
        .def_property_readonly("sigma",
                               [](const ProblemGeometry& g) { return std::vector<double>(g.sigma().begin(), g.sigma().end()); })
        .def("__repr__", [](const ProblemGeometry& g) {
            return "ProblemGeometry(pi0=" + std::to_string(g.pi0()) + ", classes=" + std::to_string(g.num_classes()) + ")";
        });

    py::class_<Hyperparams>(m, "Hyperparams")
        .def(py::init([](double l1, double l2, double k, double d) { return Hyperparams{l1, l2, k, d}; }),
             py::arg("lambda1"), py::arg("lambda2"), py::arg("kappa") = 0.0, py::arg("dlambda") = 0.0)
        .def_readwrite("lambda1", &Hyperparams::lambda1)
        .def_readwrite("lambda2", &Hyperparams::lambda2)
        .def_readwrite("kappa", &Hyperparams::kappa)
        .def_readwrite("dlambda", &Hyperparams::dlambda)
        .def("__eq__", [](const Hyperparams& a, const Hyperparams& b) { return a == b; })
        .def("__repr__", [](const Hyperparams& h) {
            return "Hyperparams(lambda1=" + std::to_string(h.lambda1) + ", lambda2=" + std::to_string(h.lambda2) +
                   ", kappa=" + std::to_string(h.kappa) + ", dlambda=" + std::to_string(h.dlambda) + ")";
        });

    m.def(
        "solve_point",
        [](const ProblemGeometry& g, const Hyperparams& h, double tolerance) {
            SolveOptions o;
            o.tolerance = tolerance;
            ReplicaPoint p;
            {
                py::gil_scoped_release release;
                p = solve_point(g, h, o);
            }
            return point_dict(p);
        },
        py::arg("geometry"), py::arg("hyper"), py::arg("tolerance") = 1e-10,
        "Solves both fixed-point stages and returns order parameters and predicted errors.");

    m.def(
        "tune_lambda1",
        [](const ProblemGeometry& g) {
            const auto r = tune_lambda1(g, SearchGrids::defaults());
            return py::make_tuple(r.lambda1, r.eps1);
        },
        py::arg("geometry"), "First-stage penalty minimizing the predicted first-stage error: (lambda1, eps1).");

    m.def(
        "tune_strategy",
        [](const ProblemGeometry& g, const std::string& kind, std::optional<double> lambda1) {
            const auto grids = SearchGrids::defaults();
            const double l1 = lambda1 ? *lambda1 : tune_lambda1(g, grids).lambda1;
            ReplicaObjective objective(g, {});
            const StrategyKind kinds[] = {strategy_from_string(kind)};
            const auto r = tune_strategies(objective, kinds, l1, grids).front();
            return py::make_tuple(r.chosen, r.objective);
        },
        py::arg("geometry"), py::arg("strategy"), py::arg("lambda1") = py::none(),
        "Replica-tuned hyperparameters of one strategy: (Hyperparams, eps2).");

    m.def(
        "generate_instance",
        [](const ProblemGeometry& g, std::size_t n, std::uint64_t seed) {
            const auto inst = generate_instance(g, n, seed);
            py::list designs, responses, targets;
            for (std::size_t k = 1; k <= inst.num_classes(); ++k) {
                designs.append(Matrix(inst.design(k)));
                responses.append(inst.responses[k - 1]);
                targets.append(inst.truth.class_target(k));
            }
            py::dict d;
            d["designs"] = designs;
            d["responses"] = responses;
            d["targets"] = targets;
            d["supports"] = inst.truth.supports;
            return d;
        },
        py::arg("geometry"), py::arg("num_features"), py::arg("seed"),
        "Draws one synthetic instance; class 1 is the target.");

    m.def(
        "fit_pretraining",
        [](const std::vector<Matrix>& designs, const std::vector<Vector>& responses, double lambda1, double tolerance) {
            return fit_pretraining(views(designs, responses), lambda1, solver(tolerance)).estimate.coefficients;
        },
        py::arg("designs"), py::arg("responses"), py::arg("lambda1"), py::arg("tolerance") = 1e-8,
        "Pooled first-stage Lasso over all classes.");

    m.def(
        "fit_finetune",
        [](const Matrix& design, const Vector& response, const Vector& first, const Hyperparams& h, double tolerance) {
            const DatasetView target{view_of(design), &response};
            const Estimate x1{first, Stage::first};
            return fit_finetune(target, x1, h, solver(tolerance)).estimate.coefficients;
        },
        py::arg("design"), py::arg("response"), py::arg("first_stage"), py::arg("hyper"), py::arg("tolerance") = 1e-8,
        "Second-stage Lasso on the target class; the prediction is kappa * first_stage + result.");

    m.def(
        "conditional_gen_error",
        [](const Vector& first, const Vector& second, const std::vector<Vector>& targets, const ProblemGeometry& g,
           const Hyperparams& h) {
            GroundTruth truth;
            truth.num_features = static_cast<std::size_t>(first.size());
            // A truth with one private block per class reproduces the given class targets.
            truth.supports.push_back({});
            truth.values.push_back(Vector());
            for (const auto& t : targets) {
                std::vector<std::size_t> idx;
                std::vector<double> vals;
                for (Eigen::Index i = 0; i < t.size(); ++i)
                    if (t[i] != 0.0) {
                        idx.push_back(static_cast<std::size_t>(i));
                        vals.push_back(t[i]);
                    }
                truth.supports.push_back(idx);
                truth.values.push_back(Eigen::Map<const Vector>(vals.data(), static_cast<Eigen::Index>(vals.size())));
            }
            const Estimate x1{first, Stage::first}, x2{second, Stage::second};
            const auto e = conditional_gen_error(x1, &x2, truth, g, h);
            return py::make_tuple(e.first, e.second);
        },
        py::arg("first_stage"), py::arg("second_stage"), py::arg("targets"), py::arg("geometry"), py::arg("hyper"),
        "Exact test errors over fresh Gaussian designs: (first stage, second stage).");

    m.def(
        "_run_command",
        [](const std::string& command, const std::string& path, int workers) {
            const auto config = load_config(path);
            std::vector<SweepRecord> records;
            {
                py::gil_scoped_release release;
                if (command == "replica-solve")
                    records = cmd_replica_solve(config);
                else if (command == "sweep")
                    records = cmd_sweep(config, workers);
                else if (command == "simulate")
                    records = cmd_simulate(config, workers);
                else if (command == "strategies")
                    records = cmd_strategies(config, workers);
                else
                    throw std::invalid_argument("unknown command '" + command + "'");
            }
            return format_records(records, OutputFormat::json);
        },
        py::arg("command"), py::arg("config_path"), py::arg("workers") = 1);

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
}
