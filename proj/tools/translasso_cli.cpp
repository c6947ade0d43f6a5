#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "translasso/experiments.hpp"

namespace {

namespace fs = std::filesystem;
using namespace translasso;

enum ExitCode { kOk = 0, kConfigError = 1, kNumericalError = 2 };

struct Flags
{
    std::string config;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
    int workers = 1;
    std::string format = "csv";
};

void add_flags(CLI::App* cmd, Flags& f)
{
    cmd->add_option("--config", f.config, "YAML run configuration")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", f.out, "output directory (created if missing)");
    cmd->add_option("--seed", f.seed, "root seed; overrides the config value");
    cmd->add_option("--workers", f.workers, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
    cmd->add_option("--format", f.format, "table format")->check(CLI::IsMember({"csv", "json"}));
}

int run(const std::string& command, const Flags& f)
{
    ExperimentConfig config = load_config(f.config);
    if (f.seed) config.seed = *f.seed;
    const fs::path out_dir(f.out);
    fs::create_directories(out_dir);
    {
        std::ofstream resolved(out_dir / "resolved_config.json");
        resolved << resolved_config_json(config) << '\n';
    }
    const auto format = f.format == "json" ? OutputFormat::json : OutputFormat::csv;
    const std::string ext = f.format == "json" ? ".json" : ".csv";

    if (command == "realdata") {
        const auto run = cmd_realdata(config);
        write_realdata_outputs(out_dir, config, run);
        std::cout << "target " << run.result.target << ": test MSE " << run.result.test.mse << " +- "
                  << run.result.test.jackknife_se << " (" << run.result.test.rows << " rows)\n";
        return kOk;
    }

    std::vector<SweepRecord> records;
    std::string stem = command;
    if (command == "replica-solve") {
        records = cmd_replica_solve(config);
        stem = "replica_solve";
        std::cout << format_records(records, format);
    } else if (command == "sweep") {
        records = cmd_sweep(config, f.workers);
    } else if (command == "simulate") {
        records = cmd_simulate(config, f.workers);
    } else {
        records = cmd_strategies(config, f.workers);
    }
    write_records(out_dir / (stem + ext), records, format);
    std::size_t skipped = 0;
    for (const auto& r : records) skipped += r.skipped ? 1 : 0;
    std::cerr << records.size() << " records written to " << (out_dir / (stem + ext)).string();
    if (skipped) std::cerr << " (" << skipped << " skipped)";
    std::cerr << '\n';
    return kOk;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Two-stage transfer Lasso: replica predictions, simulations and cross-validated fits"};
    app.require_subcommand(1);
    Flags flags;
    const char* commands[][2] = {
        {"replica-solve", "solve the order-parameter equations at one point"},
        {"sweep", "replica predictions over a hyperparameter or geometry grid"},
        {"simulate", "finite-N simulations, optionally joined with replica predictions"},
        {"strategies", "compare hyperparameter selection strategies over a noise grid"},
        {"realdata", "cross-validated two-stage fit on delimited tables"},
    };
    for (const auto& c : commands) add_flags(app.add_subcommand(c[0], c[1]), flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }
    const std::string command = app.get_subcommands().front()->get_name();
    try {
        return run(command, flags);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kNumericalError;
    }
}
