#pragma once

// Ensemble drivers: portraits, similarity scans, the sigma and OD sweeps,
// Lyapunov sweeps, the averaged map, the atom-light SME protocol, and the
// config-driven orchestration that writes output files and a summary.
//
// Every work item draws from streams keyed by (seed, trajectory id, step),
// and results are gathered into indexed slots, so outputs do not depend on
// the number of worker threads.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kicktop/analysis/config.hpp"
#include "kicktop/analysis/engines.hpp"
#include "kicktop/analysis/io.hpp"
#include "kicktop/analysis/metrics.hpp"
#include "kicktop/atom_light.hpp"
#include "kicktop/classical_kt.hpp"
#include "kicktop/errors.hpp"
#include "kicktop/hp_gaussian.hpp"
#include "kicktop/meas_feedback.hpp"
#include "kicktop/parallel.hpp"
#include "kicktop/rng.hpp"
#include "kicktop/spin_core.hpp"

namespace kicktop {

// ---------------------------------------------------------------- portraits

struct PortraitDataset {
    std::vector<TrajectoryRecord> records;
    std::vector<long long> ic_ids;
};

/// One record per (IC, realization); trajectory id = ic * n_trajectories + r.
inline PortraitDataset phase_portrait(EngineKind engine, const ProtocolParams& params, const std::vector<Vec3>& ics,
                                      std::uint64_t seed, unsigned threads, long n_trajectories = 1,
                                      const TrajectoryOptions& opts = {}) {
    if (ics.empty()) throw ParameterError("IC grid must be nonempty");
    if (n_trajectories < 1) throw ParameterError("n_trajectories must be >= 1");
    params.validate();
    require_engine_supports(engine, params.n_atoms);
    const std::size_t per_ic = static_cast<std::size_t>(n_trajectories);
    PortraitDataset out;
    out.records.resize(ics.size() * per_ic);
    out.ic_ids.resize(out.records.size());
    parallel_for(out.records.size(), threads, [&](std::size_t item) {
        const std::size_t ic = item / per_ic;
        out.records[item] = simulate_trajectory(engine, params, ics[ic], {seed, item}, opts);
        out.ic_ids[item] = static_cast<long long>(ic);
    });
    return out;
}

// --------------------------------------------------------------- similarity

struct SimilarityRow {
    std::size_t ic_id = 0;
    Vec3 ic = Vec3::UnitZ();
    SimilarityScore score;
    double d_max = 0.0;
};

struct SimilaritySummary {
    double mean = std::nan("");
    double median = std::nan("");
    std::size_t n_valid = 0;
    std::size_t n_flagged = 0;
};

inline SimilaritySummary summarize_similarity(const std::vector<SimilarityRow>& rows) {
    SimilaritySummary s;
    std::vector<double> values;
    CompensatedSum sum;
    for (const auto& r : rows) {
        if (r.score.valid()) {
            values.push_back(r.score.S);
            sum.add(r.score.S);
        } else {
            ++s.n_flagged;
        }
    }
    s.n_valid = values.size();
    if (values.empty()) return s;
    s.mean = sum.value() / static_cast<double>(values.size());
    std::sort(values.begin(), values.end());
    const std::size_t h = values.size() / 2;
    s.median = values.size() % 2 ? values[h] : 0.5 * (values[h - 1] + values[h]);
    return s;
}

/// Scores one trajectory per IC against the classical path from the same IC.
inline std::vector<SimilarityRow> similarity_scan(EngineKind engine, const ProtocolParams& params,
                                                  const std::vector<Vec3>& ics, std::uint64_t seed,
                                                  unsigned threads, const TrajectoryOptions& opts = {}) {
    const PortraitDataset data = phase_portrait(engine, params, ics, seed, threads, 1, opts);
    std::vector<SimilarityRow> rows(ics.size());
    for (std::size_t i = 0; i < ics.size(); ++i) {
        const auto reference = ckt_path(data.records[i].ic, params.k, params.p, params.n_steps);
        rows[i].ic_id = i;
        rows[i].ic = data.records[i].ic;
        rows[i].score = similarity(data.records[i], reference);
        rows[i].d_max = max_classical_distance(data.records[i], reference);
    }
    return rows;
}

inline Table similarity_table(const std::vector<SimilarityRow>& rows) {
    Table t;
    t.columns = {"ic_id", "theta0", "phi0", "S", "cor_theta", "cor_phi", "min_norm_sq", "D_max", "flag"};
    for (const auto& r : rows) {
        t.add({static_cast<long long>(r.ic_id), detail::polar_angle(r.ic), std::atan2(r.ic.y(), r.ic.x()), r.score.S,
               r.score.cor_theta, r.score.cor_phi, r.score.min_norm_sq, r.d_max,
               std::string(to_string(r.score.flag))});
    }
    return t;
}

// -------------------------------------------------------------- sigma sweep

struct SigmaPoint {
    double sigma_over_sqrtJ = 0.0;
    double sigma = 0.0;
    double mean_d_max = 0.0;        ///< over ICs and realizations
    double ic_std_error = 0.0;      ///< spread of per-IC means / sqrt(n_ic)
    double realization_sd = 0.0;    ///< mean within-IC standard deviation
    std::size_t n_samples = 0;
};

/// Mean maximum distance to the classical path against sigma / sqrt(J).
/// Realization r of IC i uses the same streams at every sigma.
inline std::vector<SigmaPoint> sweep_sigma(EngineKind engine, const ProtocolParams& base,
                                           const std::vector<double>& sigma_over_sqrtJ, const std::vector<Vec3>& ics,
                                           long realizations, std::uint64_t seed, unsigned threads) {
    if (sigma_over_sqrtJ.empty() || ics.empty()) throw ParameterError("sigma list and IC grid must be nonempty");
    if (realizations < 1) throw ParameterError("realizations must be >= 1");
    require_engine_supports(engine, base.n_atoms);
    const std::size_t n_ic = ics.size();
    const auto n_real = static_cast<std::size_t>(realizations);
    std::vector<std::vector<Vec3>> references(n_ic);
    for (std::size_t i = 0; i < n_ic; ++i) references[i] = ckt_path(unit_direction(ics[i]), base.k, base.p, base.n_steps);

    std::vector<double> d(sigma_over_sqrtJ.size() * n_ic * n_real);
    parallel_for(d.size(), threads, [&](std::size_t item) {
        const std::size_t s = item / (n_ic * n_real);
        const std::size_t rest = item % (n_ic * n_real);
        ProtocolParams p = base;
        p.sigma = sigma_over_sqrtJ[s] * std::sqrt(p.j());
        const auto rec = simulate_trajectory(engine, p, ics[rest / n_real], {seed, rest});
        d[item] = max_classical_distance(rec, references[rest / n_real]);
    });

    std::vector<SigmaPoint> out;
    for (std::size_t s = 0; s < sigma_over_sqrtJ.size(); ++s) {
        SigmaPoint pt;
        pt.sigma_over_sqrtJ = sigma_over_sqrtJ[s];
        pt.sigma = sigma_over_sqrtJ[s] * std::sqrt(base.j());
        pt.n_samples = n_ic * n_real;
        CompensatedSum total, ic_sq, within;
        std::vector<double> ic_means(n_ic);
        for (std::size_t i = 0; i < n_ic; ++i) {
            CompensatedSum acc;
            for (std::size_t r = 0; r < n_real; ++r) acc.add(d[(s * n_ic + i) * n_real + r]);
            ic_means[i] = acc.value() / static_cast<double>(n_real);
            total.add(acc.value());
            if (n_real > 1) {
                CompensatedSum sq;
                for (std::size_t r = 0; r < n_real; ++r) {
                    const double e = d[(s * n_ic + i) * n_real + r] - ic_means[i];
                    sq.add(e * e);
                }
                within.add(std::sqrt(sq.value() / static_cast<double>(n_real - 1)));
            }
        }
        pt.mean_d_max = total.value() / static_cast<double>(pt.n_samples);
        for (double m : ic_means) ic_sq.add((m - pt.mean_d_max) * (m - pt.mean_d_max));
        pt.ic_std_error = n_ic > 1 ? std::sqrt(ic_sq.value() / static_cast<double>(n_ic - 1) / static_cast<double>(n_ic))
                                   : 0.0;
        pt.realization_sd = within.value() / static_cast<double>(n_ic);
        out.push_back(pt);
    }
    return out;
}

inline Table sigma_table(const std::vector<SigmaPoint>& pts, const ProtocolParams& base) {
    Table t;
    t.columns = {"sigma_over_sqrtJ", "sigma", "N", "k", "n_steps", "mean_D_max", "ic_std_error", "realization_sd",
                 "n_samples"};
    for (const auto& p : pts) {
        t.add({p.sigma_over_sqrtJ, p.sigma, static_cast<long long>(base.n_atoms), base.k,
               static_cast<long long>(base.n_steps), p.mean_d_max, p.ic_std_error, p.realization_sd,
               static_cast<long long>(p.n_samples)});
    }
    return t;
}

// ----------------------------------------------------------------- OD sweep

/// Optical pumping per measurement window for a protocol at ensemble size
/// N: the window is chosen so that 1/(kappa T) = sigma^2.
inline AtomLightParams atom_light_for(const ProtocolParams& params, const AtomLightConfig& al) {
    return od_params(params.n_atoms, al.sigma0_over_A, al.gamma_s, params.sigma * params.sigma, al.dt_factor);
}

struct OdPoint {
    double od = 0.0;
    long n_atoms = 0;
    double sigma = 0.0;
    double gamma_s_T = 0.0;
    double mean_S = std::nan("");
    double std_error = std::nan("");
    double mean_min_norm_sq = std::nan("");
    std::size_t n_valid = 0;
    std::size_t n_flagged = 0;
};

/// Mean similarity against OD. OD is varied through N at fixed sigma0/A;
/// sigma = sigma_over_sqrtJ sqrt(J) follows N.
inline std::vector<OdPoint> sweep_od(const ProtocolParams& base, double sigma_over_sqrtJ, const std::vector<double>& ods,
                                     const AtomLightConfig& al, const std::vector<Vec3>& ics, long realizations,
                                     std::uint64_t seed, unsigned threads) {
    if (ods.empty() || ics.empty()) throw ParameterError("OD list and IC grid must be nonempty");
    if (realizations < 1) throw ParameterError("realizations must be >= 1");
    if (base.n_steps < 3) throw ParameterError("similarity needs n_steps >= 3");
    const std::size_t n_ic = ics.size();
    const auto n_real = static_cast<std::size_t>(realizations);
    std::vector<std::vector<Vec3>> references(n_ic);
    for (std::size_t i = 0; i < n_ic; ++i) references[i] = ckt_path(unit_direction(ics[i]), base.k, base.p, base.n_steps);

    std::vector<OdPoint> out(ods.size());
    std::vector<ProtocolParams> params(ods.size(), base);
    for (std::size_t o = 0; o < ods.size(); ++o) {
        const long n_atoms = std::lround(ods[o] / al.sigma0_over_A);
        if (n_atoms < 1) throw ParameterError("OD " + format_double(ods[o]) + " gives N < 1");
        params[o].n_atoms = n_atoms;
        params[o].sigma = sigma_over_sqrtJ * std::sqrt(params[o].j());
        const AtomLightParams ap = atom_light_for(params[o], al);
        out[o].od = ap.od();
        out[o].n_atoms = n_atoms;
        out[o].sigma = params[o].sigma;
        out[o].gamma_s_T = ap.gamma_s_T();
    }

    std::vector<SimilarityScore> scores(ods.size() * n_ic * n_real);
    parallel_for(scores.size(), threads, [&](std::size_t item) {
        const std::size_t o = item / (n_ic * n_real);
        const std::size_t rest = item % (n_ic * n_real);
        TrajectoryOptions opts;
        opts.gamma_s_T = out[o].gamma_s_T;
        const auto rec = simulate_trajectory(EngineKind::hp, params[o], ics[rest / n_real], {seed, rest}, opts);
        scores[item] = similarity(rec, references[rest / n_real]);
    });

    for (std::size_t o = 0; o < ods.size(); ++o) {
        CompensatedSum sum, sq, norm;
        std::vector<double> vals;
        for (std::size_t i = 0; i < n_ic * n_real; ++i) {
            const auto& s = scores[o * n_ic * n_real + i];
            if (!s.valid()) {
                ++out[o].n_flagged;
                continue;
            }
            vals.push_back(s.S);
            sum.add(s.S);
            norm.add(s.min_norm_sq);
        }
        out[o].n_valid = vals.size();
        if (vals.empty()) continue;
        const double n = static_cast<double>(vals.size());
        out[o].mean_S = sum.value() / n;
        out[o].mean_min_norm_sq = norm.value() / n;
        for (double v : vals) sq.add((v - out[o].mean_S) * (v - out[o].mean_S));
        out[o].std_error = vals.size() > 1 ? std::sqrt(sq.value() / (n - 1.0) / n) : 0.0;
    }
    return out;
}

inline Table od_table(const std::vector<OdPoint>& pts, const ProtocolParams& base) {
    Table t;
    t.columns = {"od", "N", "sigma", "gamma_s_T", "k", "n_steps", "mean_S", "std_error", "mean_min_norm_sq",
                 "n_valid", "n_flagged"};
    for (const auto& p : pts) {
        t.add({p.od, static_cast<long long>(p.n_atoms), p.sigma, p.gamma_s_T, base.k,
               static_cast<long long>(base.n_steps), p.mean_S, p.std_error, p.mean_min_norm_sq,
               static_cast<long long>(p.n_valid), static_cast<long long>(p.n_flagged)});
    }
    return t;
}

// ---------------------------------------------------------------- Lyapunov

struct LyapunovPoint {
    double k = 0.0;
    long n_atoms = 0;
    LyapunovEstimate estimate;
};

/// Largest Lyapunov exponent over a Fibonacci grid for each k.
inline std::vector<LyapunovPoint> lyapunov_sweep(EngineKind engine, const ProtocolParams& base,
                                                 const std::vector<double>& ks, const LyapunovConfig& cfg,
                                                 std::uint64_t seed, unsigned threads, double gamma_s_T = 0.0) {
    if (ks.empty()) throw ParameterError("k list must be nonempty");
    if (engine == EngineKind::quantum) {
        throw EngineMismatchError("Lyapunov estimation is available for the classical and hp engines");
    }
    const auto grid = fibonacci_sphere(cfg.ic_grid_size);
    LyapunovOptions opts = cfg.options;
    opts.seed = seed;
    std::vector<LyapunovPoint> out;
    for (double k : ks) {
        LyapunovPoint pt;
        pt.k = k;
        pt.n_atoms = base.n_atoms;
        if (engine == EngineKind::classical) {
            pt.estimate = estimate_lyapunov(ClassicalGenerator{k, base.p}, grid, opts, threads);
        } else {
            ProtocolParams p = base;
            p.k = k;
            p.validate();
            pt.estimate = estimate_lyapunov(HpGenerator{p, gamma_s_T}, grid, opts, threads);
        }
        out.push_back(std::move(pt));
    }
    return out;
}

inline Table lyapunov_table(const std::vector<LyapunovPoint>& pts, EngineKind engine) {
    Table t;
    t.columns = {"k", "engine", "N", "lambda_largest", "variance", "std_error", "n_valid", "n_failed",
                 "d0", "n_shadows", "renorm_interval", "n_steps"};
    for (const auto& p : pts) {
        const auto& e = p.estimate;
        t.add({p.k, std::string(to_string(engine)), static_cast<long long>(p.n_atoms), e.lambda_largest, e.variance,
               e.std_error, static_cast<long long>(e.n_valid), static_cast<long long>(e.local.size() - e.n_valid),
               e.settings.d0, static_cast<long long>(e.settings.n_shadows),
               static_cast<long long>(e.settings.renorm_interval), static_cast<long long>(e.settings.n_steps)});
    }
    return t;
}

// ---------------------------------------------------------- averaged map

inline DensityMatrix coherent_density(const Vec3& ic, Spin spin) {
    const Vec3 u = unit_direction(ic);
    return DensityMatrix(make_scs(std::acos(std::clamp(u.z(), -1.0, 1.0)), std::atan2(u.y(), u.x()), spin));
}

/// States after steps 1..n_steps of the outcome-averaged map.
inline std::vector<DensityMatrix> averaged_path(const ProtocolParams& params, const Vec3& ic) {
    params.validate();
    require_dense_range(params.spin());
    std::vector<DensityMatrix> out;
    DensityMatrix rho = coherent_density(ic, params.spin());
    for (long s = 0; s < params.n_steps; ++s) {
        rho = averaged_step(rho, params);
        out.push_back(rho);
    }
    return out;
}

/// Mean of |psi><psi| over n_traj conditioned trajectories after n_steps.
inline DensityMatrix monte_carlo_average(const ProtocolParams& params, const Vec3& ic, long n_traj,
                                         std::uint64_t seed, unsigned threads) {
    params.validate();
    require_dense_range(params.spin());
    if (n_traj < 1) throw ParameterError("n_traj must be >= 1");
    const Vec3 u = unit_direction(ic);
    const DickeState start = make_scs(std::acos(std::clamp(u.z(), -1.0, 1.0)), std::atan2(u.y(), u.x()), params.spin());
    std::vector<Eigen::VectorXcd> finals(static_cast<std::size_t>(n_traj));
    parallel_for(finals.size(), threads, [&](std::size_t t) {
        DickeState psi = start;
        for (long s = 1; s <= params.n_steps; ++s) {
            CounterRng rng = detail::outcome_stream({seed, t}, s);
            psi = trajectory_step(psi, params, rng).state;
        }
        finals[t] = psi.amplitudes();
    });
    const auto d = static_cast<Eigen::Index>(params.spin().dim());
    Eigen::MatrixXcd acc = Eigen::MatrixXcd::Zero(d, d);
    for (const auto& a : finals) acc.noalias() += a * a.adjoint();
    acc /= static_cast<double>(n_traj);
    return DensityMatrix(params.spin(), std::move(acc));
}

inline Table averaged_table(const std::vector<DensityMatrix>& path) {
    Table t;
    t.columns = {"step", "n_x", "n_y", "n_z", "purity", "trace"};
    for (std::size_t s = 0; s < path.size(); ++s) {
        const Vec3 n = path[s].bloch();
        t.add({static_cast<long long>(s + 1), n.x(), n.y(), n.z(), path[s].purity(), path[s].trace()});
    }
    return t;
}

// ------------------------------------------------------------ atom-light SME

struct SmeRow {
    long step = 0;
    double m = 0.0;
    Vec3 n = Vec3::Zero();
    double purity = 1.0;
};

/// Protocol with the measurement resolved as a continuous record: during
/// each window the state follows the SME (with optical pumping when
/// `al.decoherence`), m is the time-averaged record, then the feedback
/// rotation for m is applied.
inline std::vector<SmeRow> sme_trajectory(const ProtocolParams& params, const AtomLightConfig& al, const Vec3& ic,
                                          const SeedProvenance& seed) {
    params.validate();
    require_dense_range(params.spin());
    const AtomLightParams ap = atom_light_for(params, al);
    const SmeRates rates{ap.kappa(), al.decoherence ? ap.gamma_s : 0.0};
    const Spin spin = params.spin();
    SmeRecordSource source{coherent_density(ic, spin), rates};
    std::vector<SmeRow> out;
    for (long s = 1; s <= params.n_steps; ++s) {
        CounterRng rng(seed.master_seed, static_cast<std::uint32_t>(seed.trajectory), static_cast<std::uint32_t>(s),
                       stream_tag::kRecord);
        const double m = continuous_record(source, ap, rng);
        const FeedbackRotation fb = feedback_unitary(m, params);
        const Eigen::MatrixXcd u = rotation_matrix(spin, Axis::y, fb.y_angle) * rotation_matrix(spin, Axis::z, fb.z_angle);
        Eigen::MatrixXcd rho = u * source.rho.matrix() * u.adjoint();
        rho = 0.5 * (rho + rho.adjoint()).eval();
        source.rho = DensityMatrix(spin, std::move(rho));
        out.push_back({s, m, source.rho.bloch(), source.rho.purity()});
    }
    return out;
}

inline Table sme_table(const std::vector<std::vector<SmeRow>>& runs, const std::vector<long long>& ic_ids) {
    Table t;
    t.columns = {"ic_id", "trajectory", "step", "m", "n_x", "n_y", "n_z", "purity"};
    for (std::size_t r = 0; r < runs.size(); ++r) {
        for (const auto& row : runs[r]) {
            t.add({ic_ids[r], static_cast<long long>(r), static_cast<long long>(row.step), row.m, row.n.x(), row.n.y(),
                   row.n.z(), row.purity});
        }
    }
    return t;
}

// ------------------------------------------------------------ orchestration

enum class Command { trajectory, portrait, lyapunov, averaged, sme, similarity, sweep_sigma, sweep_od };

inline const char* to_string(Command c) {
    switch (c) {
        case Command::trajectory: return "trajectory";
        case Command::portrait: return "portrait";
        case Command::lyapunov: return "lyapunov";
        case Command::averaged: return "averaged";
        case Command::sme: return "sme";
        case Command::similarity: return "similarity";
        case Command::sweep_sigma: return "sweep-sigma";
        case Command::sweep_od: return "sweep-od";
    }
    return "unknown";
}

struct RunSummary {
    std::string command;
    std::vector<std::string> outputs;
    std::map<std::string, long long> counts;
    double elapsed_seconds = 0.0;
    nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

/// Optional inputs for the similarity command: compare the paths of one
/// trajectory file against those of a reference file, pairwise in order.
struct SimilarityFiles {
    std::string input;
    std::string reference;
};

namespace detail {

inline std::vector<std::vector<Vec3>> load_paths(const std::string& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("input", "cannot open " + file);
    std::vector<std::vector<Vec3>> out;
    for (auto& p : read_trajectory_csv(in)) out.push_back(std::move(p.n));
    return out;
}

inline double pumping_per_window(const RunConfig& cfg, const ProtocolParams& p) {
    return cfg.atomlight.decoherence ? atom_light_for(p, cfg.atomlight).gamma_s_T() : 0.0;
}

}  // namespace detail

/// Runs one command from a validated configuration, writes
/// `<out>/<command>.<csv|jsonl>` plus `<out>/<command>.summary.jsonl`, and
/// returns the summary.
inline RunSummary run_ensemble(const RunConfig& cfg, Command command, const SimilarityFiles& files = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    const ProtocolParams params = cfg.resolved_protocol();
    params.validate();
    const auto& run = cfg.run;
    const std::filesystem::path out_dir(run.out);
    const std::string stem = to_string(command);
    RunSummary summary;
    summary.command = stem;
    Table table;

    switch (command) {
        case Command::trajectory:
        case Command::portrait: {
            TrajectoryOptions opts;
            opts.record_covariance = run.record_covariance;
            opts.gamma_s_T = detail::pumping_per_window(cfg, params);
            const long per_ic = command == Command::trajectory ? run.n_trajectories : 1;
            const PortraitDataset data =
                phase_portrait(run.engine, params, cfg.initial_conditions(), run.seed, run.threads, per_ic, opts);
            for (const auto& r : data.records) r.validate();
            table = trajectory_table(data.records, data.ic_ids, run.record_covariance);
            summary.counts["trajectories"] = static_cast<long long>(data.records.size());
            summary.extra["gamma_s_T"] = opts.gamma_s_T;
            break;
        }
        case Command::similarity: {
            std::vector<SimilarityRow> rows;
            if (!files.input.empty() || !files.reference.empty()) {
                if (files.input.empty() || files.reference.empty()) {
                    throw ConfigError("input", "--input and --reference must be given together");
                }
                const auto a = detail::load_paths(files.input);
                const auto b = detail::load_paths(files.reference);
                if (a.size() != b.size()) {
                    throw ParameterError("input has " + std::to_string(a.size()) + " trajectories, reference has " +
                                         std::to_string(b.size()));
                }
                for (std::size_t i = 0; i < a.size(); ++i) {
                    SimilarityRow row;
                    row.ic_id = i;
                    row.ic = b[i].empty() ? Vec3::UnitZ() : b[i].front();
                    row.score = similarity(a[i], b[i]);
                    row.d_max = max_classical_distance(a[i], b[i]);
                    rows.push_back(row);
                }
            } else {
                TrajectoryOptions opts;
                opts.gamma_s_T = detail::pumping_per_window(cfg, params);
                rows = similarity_scan(run.engine, params, cfg.initial_conditions(), run.seed, run.threads, opts);
                summary.extra["gamma_s_T"] = opts.gamma_s_T;
            }
            table = similarity_table(rows);
            const SimilaritySummary s = summarize_similarity(rows);
            summary.counts["ics"] = static_cast<long long>(rows.size());
            summary.counts["flagged"] = static_cast<long long>(s.n_flagged);
            summary.extra["mean_S"] = std::isfinite(s.mean) ? nlohmann::ordered_json(s.mean) : nullptr;
            summary.extra["median_S"] = std::isfinite(s.median) ? nlohmann::ordered_json(s.median) : nullptr;
            break;
        }
        case Command::lyapunov: {
            const std::vector<double> ks = cfg.lyapunov.k_values.empty() ? std::vector<double>{params.k}
                                                                         : cfg.lyapunov.k_values;
            const auto pts = lyapunov_sweep(run.engine, params, ks, cfg.lyapunov, run.seed, run.threads,
                                            detail::pumping_per_window(cfg, params));
            table = lyapunov_table(pts, run.engine);
            long long failed = 0;
            for (const auto& p : pts) failed += static_cast<long long>(p.estimate.local.size() - p.estimate.n_valid);
            summary.counts["k_values"] = static_cast<long long>(pts.size());
            summary.counts["failed_ics"] = failed;
            break;
        }
        case Command::averaged: {
            const auto ics = cfg.initial_conditions();
            table.columns = {"ic_id", "step", "n_x", "n_y", "n_z", "purity", "trace"};
            for (std::size_t i = 0; i < ics.size(); ++i) {
                const Table one = averaged_table(averaged_path(params, ics[i]));
                for (const auto& row : one.rows) {
                    std::vector<Cell> cells{static_cast<long long>(i)};
                    cells.insert(cells.end(), row.begin(), row.end());
                    table.add(std::move(cells));
                }
            }
            summary.counts["ics"] = static_cast<long long>(ics.size());
            summary.extra["gamma"] = gamma_rate(params.k, params.sigma, params.j());
            break;
        }
        case Command::sme: {
            const auto ics = cfg.initial_conditions();
            const auto per_ic = static_cast<std::size_t>(run.n_trajectories);
            std::vector<std::vector<SmeRow>> runs(ics.size() * per_ic);
            std::vector<long long> ids(runs.size());
            parallel_for(runs.size(), run.threads, [&](std::size_t item) {
                runs[item] = sme_trajectory(params, cfg.atomlight, ics[item / per_ic], {run.seed, item});
                ids[item] = static_cast<long long>(item / per_ic);
            });
            table = sme_table(runs, ids);
            const AtomLightParams ap = atom_light_for(params, cfg.atomlight);
            summary.counts["trajectories"] = static_cast<long long>(runs.size());
            summary.extra["od"] = ap.od();
            summary.extra["kappa"] = ap.kappa();
            summary.extra["T"] = ap.T;
            summary.extra["gamma_s_T"] = cfg.atomlight.decoherence ? ap.gamma_s_T() : 0.0;
            break;
        }
        case Command::sweep_sigma: {
            const auto pts = sweep_sigma(run.engine, params, cfg.sweep.sigma_over_sqrtJ, cfg.initial_conditions(),
                                         cfg.sweep.realizations, run.seed, run.threads);
            table = sigma_table(pts, params);
            summary.counts["points"] = static_cast<long long>(pts.size());
            break;
        }
        case Command::sweep_od: {
            if (run.engine != EngineKind::hp) {
                throw EngineMismatchError("the OD sweep runs on the hp engine");
            }
            const auto pts = sweep_od(params, cfg.sigma_over_sqrtJ, cfg.sweep.od, cfg.atomlight,
                                      cfg.initial_conditions(), cfg.sweep.realizations, run.seed, run.threads);
            table = od_table(pts, params);
            summary.counts["points"] = static_cast<long long>(pts.size());
            break;
        }
    }

    const std::filesystem::path data_path = out_dir / (stem + extension(run.format));
    write_file_atomic(data_path, render_table(table, run.format));
    summary.outputs.push_back(data_path.string());
    summary.counts["rows"] = static_cast<long long>(table.rows.size());
    summary.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    nlohmann::ordered_json j;
    j["command"] = summary.command;
    j["engine"] = to_string(run.engine);
    j["seed"] = run.seed;
    j["threads"] = run.threads;
    j["N"] = params.n_atoms;
    j["k"] = params.k;
    j["p"] = params.p;
    j["sigma"] = params.sigma;
    j["n_steps"] = params.n_steps;
    j["outputs"] = summary.outputs;
    j["counts"] = summary.counts;
    j["elapsed_s"] = summary.elapsed_seconds;
    for (const auto& [key, value] : summary.extra.items()) j[key] = value;
    write_file_atomic(out_dir / (stem + ".summary.jsonl"), j.dump() + "\n");
    return summary;
}

}  // namespace kicktop
