#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "kicktop/kicktop.hpp"

namespace {

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kConfigError = 2,
    kNumericalDegeneracy = 3,
    kEngineMismatch = 4,
};

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> engine;
    std::optional<std::string> out;
    std::optional<unsigned> threads;
    std::optional<std::string> format;
};

kicktop::RunConfig load(const Overrides& o) {
    kicktop::RunConfig cfg;
    if (!o.config.empty()) {
        std::ifstream in(o.config);
        if (!in) throw kicktop::ConfigError("", "cannot open config file " + o.config);
        cfg = kicktop::parse_config(in);
    }
    if (o.seed) cfg.run.seed = *o.seed;
    if (o.engine) {
        try {
            cfg.run.engine = kicktop::parse_engine(*o.engine);
        } catch (const kicktop::ParameterError& e) {
            throw kicktop::ConfigError("--engine", e.what());
        }
    }
    if (o.out) cfg.run.out = *o.out;
    if (o.threads) {
        if (*o.threads < 1) throw kicktop::ConfigError("--threads", "must be >= 1");
        cfg.run.threads = *o.threads;
    }
    if (o.format) {
        try {
            cfg.run.format = kicktop::parse_format(*o.format);
        } catch (const kicktop::ParameterError& e) {
            throw kicktop::ConfigError("--format", e.what());
        }
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Measurement-and-feedback kicked-top simulator"};
    app.require_subcommand(1);
    app.fallthrough();

    Overrides o;
    app.add_option("--config", o.config, "INI configuration file")->check(CLI::ExistingFile);
    app.add_option("--seed", o.seed, "master seed (u64)");
    app.add_option("--engine", o.engine, "classical | hp | quantum");
    app.add_option("--out", o.out, "output directory");
    app.add_option("--threads", o.threads, "worker threads");
    app.add_option("--format", o.format, "csv | jsonl");

    using kicktop::Command;
    const std::pair<const char*, Command> commands[] = {
        {"trajectory", Command::trajectory}, {"portrait", Command::portrait},
        {"lyapunov", Command::lyapunov},     {"averaged", Command::averaged},
        {"sme", Command::sme},               {"similarity", Command::similarity},
        {"sweep-sigma", Command::sweep_sigma}, {"sweep-od", Command::sweep_od},
    };
    const char* help[] = {
        "trajectories from each IC (run.n_trajectories realizations)",
        "one trajectory per IC over the IC grid",
        "largest Lyapunov exponent, optionally swept over k",
        "outcome-averaged (dephased) map from each IC",
        "protocol with the continuous-record stochastic master equation",
        "similarity score against the classical map per IC",
        "mean maximum classical distance against sigma / sqrt(J)",
        "mean similarity against optical depth",
    };
    std::optional<Command> chosen;
    kicktop::SimilarityFiles files;
    for (std::size_t i = 0; i < std::size(commands); ++i) {
        auto* sub = app.add_subcommand(commands[i].first, help[i]);
        const Command c = commands[i].second;
        sub->callback([&chosen, c] { chosen = c; });
        if (c == Command::similarity) {
            sub->add_option("--input", files.input, "trajectory CSV to score")->check(CLI::ExistingFile);
            sub->add_option("--reference", files.reference, "reference trajectory CSV")->check(CLI::ExistingFile);
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        const kicktop::RunConfig cfg = load(o);
        const kicktop::RunSummary s = kicktop::run_ensemble(cfg, *chosen, files);
        for (const auto& path : s.outputs) std::cout << path << '\n';
        return kOk;
    } catch (const kicktop::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const kicktop::NumericalDegeneracyError& e) {
        std::cerr << "numerical degeneracy: " << e.what() << '\n';
        return kNumericalDegeneracy;
    } catch (const kicktop::DegenerateOutcomeError& e) {
        std::cerr << "numerical degeneracy: " << e.what() << '\n';
        return kNumericalDegeneracy;
    } catch (const kicktop::FrameDegeneracyError& e) {
        std::cerr << "numerical degeneracy: " << e.what() << '\n';
        return kNumericalDegeneracy;
    } catch (const kicktop::IntegratorStepError& e) {
        std::cerr << "numerical degeneracy: " << e.what() << '\n';
        return kNumericalDegeneracy;
    } catch (const kicktop::EngineMismatchError& e) {
        std::cerr << "engine mismatch: " << e.what() << '\n';
        return kEngineMismatch;
    } catch (const kicktop::ParameterError& e) {
        std::cerr << "parameter error: " << e.what() << '\n';
        return kEngineMismatch;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
}
