#pragma once

// INI run configuration. Sections and keys:
//
//   [protocol]  k, p, sigma_over_sqrtJ, N, n_steps
//   [atomlight] sigma0_over_A, gamma_s, dt_factor, decoherence
//   [lyapunov]  d0, n_shadows, renorm_interval, ic_grid_size, n_steps,
//               k_values | (k_min, k_max, k_step)
//   [run]       engine, seed, threads, n_trajectories, ics | ic_grid_size,
//               format, out, record_covariance
//   [sweep]     sigma_over_sqrtJ, od, realizations
//
// Lists are comma separated; `ics` is a ';' separated list of
// "theta,phi" pairs in radians. Unknown sections or keys are rejected.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cmath>
#include <cstdint>
#include <istream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "kicktop/analysis/engines.hpp"
#include "kicktop/atom_light.hpp"
#include "kicktop/classical_kt.hpp"
#include "kicktop/errors.hpp"
#include "kicktop/meas_feedback.hpp"

namespace kicktop {

enum class OutputFormat { csv, jsonl };

inline OutputFormat parse_format(std::string_view s) {
    if (s == "csv") return OutputFormat::csv;
    if (s == "jsonl") return OutputFormat::jsonl;
    throw ParameterError("unknown format '" + std::string(s) + "' (csv|jsonl)");
}

inline const char* to_string(OutputFormat f) { return f == OutputFormat::csv ? "csv" : "jsonl"; }

struct AtomLightConfig {
    double sigma0_over_A = kDefaultSigma0OverA;
    double gamma_s = 1.0;
    long dt_factor = 40;       ///< integrator substeps per measurement window
    bool decoherence = false;  ///< optical pumping at OD = N sigma0/A

    double od(long n_atoms) const { return static_cast<double>(n_atoms) * sigma0_over_A; }
};

struct LyapunovConfig {
    LyapunovOptions options{1e-6, 4, 1, 100, 0};
    std::size_t ic_grid_size = 200;
    std::vector<double> k_values;
};

struct RunSettings {
    EngineKind engine = EngineKind::hp;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    long n_trajectories = 1;
    std::vector<Vec3> ics;
    std::size_t ic_grid_size = 100;
    OutputFormat format = OutputFormat::csv;
    std::string out = ".";
    bool record_covariance = false;
};

struct SweepConfig {
    std::vector<double> sigma_over_sqrtJ;
    std::vector<double> od{10, 30, 60, 100, 200, 300, 600, 1000};
    long realizations = 4;
};

struct RunConfig {
    ProtocolParams protocol{1.5, 0.5 * kPi, 1.0, 1000, 30};
    double sigma_over_sqrtJ = 0.9;
    AtomLightConfig atomlight;
    LyapunovConfig lyapunov;
    RunSettings run;
    SweepConfig sweep;

    /// Protocol parameters with sigma resolved from sigma_over_sqrtJ.
    ProtocolParams resolved_protocol() const {
        ProtocolParams p = protocol;
        p.sigma = sigma_over_sqrtJ * std::sqrt(p.j());
        return p;
    }

    /// The explicit IC list, else a Fibonacci grid of ic_grid_size points.
    std::vector<Vec3> initial_conditions() const {
        return run.ics.empty() ? fibonacci_sphere(run.ic_grid_size) : run.ics;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, sep)) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline double parse_double(const std::string& key, const std::string& text) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing characters");
        if (!std::isfinite(v)) throw std::invalid_argument("not finite");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(key, "expected a number, got '" + text + "'");
    }
}

inline long long parse_integer(const std::string& key, const std::string& text) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        // Accept integral values written in exponent form, e.g. 1e7.
        const double d = parse_double(key, text);
        if (d != std::floor(d) || std::abs(d) > 9.0e18) throw ConfigError(key, "expected an integer, got '" + text + "'");
        return static_cast<long long>(d);
    }
}

inline bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
    if (text == "false" || text == "0" || text == "no" || text == "off") return false;
    throw ConfigError(key, "expected a boolean, got '" + text + "'");
}

inline std::vector<double> parse_list(const std::string& key, const std::string& text) {
    std::vector<double> out;
    for (const auto& item : split(text, ',')) out.push_back(parse_double(key, item));
    if (out.empty()) throw ConfigError(key, "expected a nonempty list");
    return out;
}

class SectionReader {
public:
    SectionReader(const boost::property_tree::ptree& tree, std::string section, std::set<std::string> allowed)
        : section_(std::move(section)) {
        const auto child = tree.get_child_optional(section_);
        if (!child) return;
        node_ = &*child;
        for (const auto& [key, value] : *node_) {
            if (!allowed.count(key)) throw ConfigError(section_ + "." + key, "unknown key");
            (void)value;
        }
    }

    bool has(const std::string& key) const { return node_ && node_->get_child_optional(key); }
    std::string path(const std::string& key) const { return section_ + "." + key; }
    std::string text(const std::string& key) const { return trim(node_->get<std::string>(key)); }

    void read(const std::string& key, double& out) const {
        if (has(key)) out = parse_double(path(key), text(key));
    }
    template <class Int>
        requires std::is_integral_v<Int>
    void read(const std::string& key, Int& out) const {
        if (!has(key)) return;
        const long long v = parse_integer(path(key), text(key));
        if constexpr (std::is_unsigned_v<Int>) {
            if (v < 0) throw ConfigError(path(key), "must be non-negative");
        }
        out = static_cast<Int>(v);
    }
    void read(const std::string& key, bool& out) const {
        if (has(key)) out = parse_bool(path(key), text(key));
    }
    void read(const std::string& key, std::string& out) const {
        if (has(key)) out = text(key);
    }
    void read(const std::string& key, std::vector<double>& out) const {
        if (has(key)) out = parse_list(path(key), text(key));
    }

private:
    std::string section_;
    const boost::property_tree::ptree* node_ = nullptr;
};

inline std::vector<Vec3> parse_ics(const std::string& key, const std::string& text) {
    std::vector<Vec3> out;
    for (const auto& pair : split(text, ';')) {
        const auto parts = split(pair, ',');
        if (parts.size() != 2) throw ConfigError(key, "expected 'theta,phi' pairs separated by ';'");
        out.push_back(bloch_from_angles(parse_double(key, parts[0]), parse_double(key, parts[1])));
    }
    if (out.empty()) throw ConfigError(key, "expected at least one initial condition");
    return out;
}

template <class Fn>
void check(const std::string& key, bool ok, Fn&& message) {
    if (!ok) throw ConfigError(key, message());
}

}  // namespace detail

/// Parses and validates an INI configuration. All problems are reported as
/// ConfigError carrying the offending key path.
inline RunConfig parse_config(std::istream& in) {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError("", "malformed config (line " + std::to_string(e.line()) + "): " + e.message());
    }
    const std::set<std::string> sections{"protocol", "atomlight", "lyapunov", "run", "sweep"};
    for (const auto& [name, child] : tree) {
        if (!sections.count(name)) throw ConfigError(name, "unknown section");
        if (child.empty() && !child.data().empty()) throw ConfigError(name, "key outside of any section");
    }

    RunConfig cfg;
    using detail::check;

    const detail::SectionReader proto(tree, "protocol", {"k", "p", "sigma_over_sqrtJ", "N", "n_steps"});
    proto.read("k", cfg.protocol.k);
    proto.read("p", cfg.protocol.p);
    proto.read("sigma_over_sqrtJ", cfg.sigma_over_sqrtJ);
    proto.read("N", cfg.protocol.n_atoms);
    proto.read("n_steps", cfg.protocol.n_steps);
    check("protocol.sigma_over_sqrtJ", cfg.sigma_over_sqrtJ > 0.0, [] { return "must be > 0"; });
    check("protocol.N", cfg.protocol.n_atoms >= 1, [] { return "must be >= 1"; });
    check("protocol.n_steps", cfg.protocol.n_steps >= 0, [] { return "must be >= 0"; });

    const detail::SectionReader al(tree, "atomlight", {"sigma0_over_A", "gamma_s", "dt_factor", "decoherence"});
    al.read("sigma0_over_A", cfg.atomlight.sigma0_over_A);
    al.read("gamma_s", cfg.atomlight.gamma_s);
    al.read("dt_factor", cfg.atomlight.dt_factor);
    al.read("decoherence", cfg.atomlight.decoherence);
    check("atomlight.sigma0_over_A", cfg.atomlight.sigma0_over_A > 0.0, [] { return "must be > 0"; });
    check("atomlight.gamma_s", cfg.atomlight.gamma_s > 0.0, [] { return "must be > 0"; });
    check("atomlight.dt_factor", cfg.atomlight.dt_factor >= 20, [] { return "must be >= 20 (dt <= T/20)"; });

    const detail::SectionReader ly(tree, "lyapunov", {"d0", "n_shadows", "renorm_interval", "ic_grid_size",
                                                      "n_steps", "k_values", "k_min", "k_max", "k_step"});
    auto& lo = cfg.lyapunov.options;
    ly.read("d0", lo.d0);
    ly.read("n_shadows", lo.n_shadows);
    ly.read("renorm_interval", lo.renorm_interval);
    ly.read("n_steps", lo.n_steps);
    ly.read("ic_grid_size", cfg.lyapunov.ic_grid_size);
    check("lyapunov.d0", lo.d0 > 0.0, [] { return "must be > 0"; });
    check("lyapunov.n_shadows", lo.n_shadows >= 1, [] { return "must be >= 1"; });
    check("lyapunov.renorm_interval", lo.renorm_interval >= 1, [] { return "must be >= 1"; });
    check("lyapunov.n_steps", lo.n_steps >= 1, [] { return "must be >= 1"; });
    check("lyapunov.ic_grid_size", cfg.lyapunov.ic_grid_size >= 1, [] { return "must be >= 1"; });
    if (ly.has("k_values")) {
        check("lyapunov.k_values", !ly.has("k_min") && !ly.has("k_max") && !ly.has("k_step"),
              [] { return "give either k_values or k_min/k_max/k_step"; });
        ly.read("k_values", cfg.lyapunov.k_values);
    } else if (ly.has("k_min") || ly.has("k_max") || ly.has("k_step")) {
        double k_min = 0.0, k_max = 0.0, k_step = 0.0;
        check("lyapunov.k_step", ly.has("k_min") && ly.has("k_max") && ly.has("k_step"),
              [] { return "k_min, k_max and k_step must be given together"; });
        ly.read("k_min", k_min);
        ly.read("k_max", k_max);
        ly.read("k_step", k_step);
        check("lyapunov.k_step", k_step > 0.0, [] { return "must be > 0"; });
        check("lyapunov.k_max", k_max >= k_min, [] { return "must be >= k_min"; });
        const long count = std::lround(std::floor((k_max - k_min) / k_step + 1e-9)) + 1;
        for (long i = 0; i < count; ++i) cfg.lyapunov.k_values.push_back(k_min + static_cast<double>(i) * k_step);
    }

    const detail::SectionReader run(tree, "run", {"engine", "seed", "threads", "n_trajectories", "ics",
                                                  "ic_grid_size", "format", "out", "record_covariance"});
    if (run.has("engine")) {
        try {
            cfg.run.engine = parse_engine(run.text("engine"));
        } catch (const ParameterError& e) {
            throw ConfigError("run.engine", e.what());
        }
    }
    if (run.has("seed")) {
        const std::string t = run.text("seed");
        try {
            std::size_t used = 0;
            cfg.run.seed = std::stoull(t, &used);
            if (used != t.size() || t.front() == '-') throw std::invalid_argument("bad");
        } catch (const std::exception&) {
            throw ConfigError("run.seed", "expected an unsigned 64-bit integer, got '" + t + "'");
        }
    }
    run.read("threads", cfg.run.threads);
    run.read("n_trajectories", cfg.run.n_trajectories);
    run.read("ic_grid_size", cfg.run.ic_grid_size);
    run.read("out", cfg.run.out);
    run.read("record_covariance", cfg.run.record_covariance);
    if (run.has("ics")) {
        check("run.ics", !run.has("ic_grid_size"), [] { return "give either ics or ic_grid_size"; });
        cfg.run.ics = detail::parse_ics("run.ics", run.text("ics"));
    }
    if (run.has("format")) {
        try {
            cfg.run.format = parse_format(run.text("format"));
        } catch (const ParameterError& e) {
            throw ConfigError("run.format", e.what());
        }
    }
    check("run.threads", cfg.run.threads >= 1, [] { return "must be >= 1"; });
    check("run.n_trajectories", cfg.run.n_trajectories >= 1, [] { return "must be >= 1"; });
    check("run.ic_grid_size", cfg.run.ic_grid_size >= 1, [] { return "must be >= 1"; });

    const detail::SectionReader sw(tree, "sweep", {"sigma_over_sqrtJ", "od", "realizations"});
    sw.read("sigma_over_sqrtJ", cfg.sweep.sigma_over_sqrtJ);
    sw.read("od", cfg.sweep.od);
    sw.read("realizations", cfg.sweep.realizations);
    for (double s : cfg.sweep.sigma_over_sqrtJ) {
        check("sweep.sigma_over_sqrtJ", s > 0.0, [] { return "entries must be > 0"; });
    }
    for (double od : cfg.sweep.od) check("sweep.od", od > 0.0, [] { return "entries must be > 0"; });
    check("sweep.realizations", cfg.sweep.realizations >= 1, [] { return "must be >= 1"; });
    if (cfg.sweep.sigma_over_sqrtJ.empty()) {
        // 21 log-spaced points over [0.1, 10].
        for (int i = 0; i <= 20; ++i) cfg.sweep.sigma_over_sqrtJ.push_back(std::pow(10.0, -1.0 + 0.1 * i));
    }
    return cfg;
}

inline RunConfig parse_config_string(const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
}

}  // namespace kicktop
