#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kicktop/kicktop.hpp"

using namespace kicktop;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("kicktop_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::size_t count_lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

std::vector<Vec3> spiral(std::size_t n, double radius = 1.0) {
    std::vector<Vec3> out;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = 0.3 + 0.1 * static_cast<double>(i);
        out.push_back(radius * bloch_from_angles(0.4 + 0.07 * static_cast<double>(i), 1.3 * t));
    }
    return out;
}

ConfigError config_error(const std::string& text) {
    try {
        parse_config_string(text);
    } catch (const ConfigError& e) {
        return e;
    }
    ADD_FAILURE() << "no ConfigError for:\n" << text;
    return ConfigError("", "");
}

}  // namespace

// ------------------------------------------------------------------ distance

TEST(MaxClassicalDistance, TrivialCases) {
    const auto a = spiral(12);
    EXPECT_EQ(max_classical_distance(a, a), 0.0);
    const std::vector<Vec3> up(5, Vec3::UnitZ()), down(5, -Vec3::UnitZ());
    EXPECT_DOUBLE_EQ(max_classical_distance(up, down), 2.0);
    EXPECT_THROW(max_classical_distance(up, spiral(4)), ParameterError);
}

TEST(MaxClassicalDistance, SymmetricWithTriangleBound) {
    CounterRng rng(1, 0, 0);
    for (int t = 0; t < 200; ++t) {
        std::vector<Vec3> a, b, c;
        for (int i = 0; i < 15; ++i) {
            a.emplace_back(rng.normal(), rng.normal(), rng.normal());
            b.emplace_back(rng.normal(), rng.normal(), rng.normal());
            c.emplace_back(rng.normal(), rng.normal(), rng.normal());
        }
        EXPECT_EQ(max_classical_distance(a, b), max_classical_distance(b, a));
        EXPECT_LE(max_classical_distance(a, c), max_classical_distance(a, b) + max_classical_distance(b, c) + 1e-12);
    }
}

// ---------------------------------------------------------------- similarity

TEST(Similarity, IdenticalUnitPathsScoreOne) {
    const auto a = spiral(20);
    const SimilarityScore s = similarity(a, a);
    ASSERT_TRUE(s.valid());
    EXPECT_NEAR(s.S, 1.0, 1e-12);
    EXPECT_NEAR(s.min_norm_sq, 1.0, 1e-12);
}

TEST(Similarity, ShortenedStepScalesByNormSquared) {
    const auto ref = spiral(20);
    auto traj = ref;
    traj[7] *= 0.9;
    const SimilarityScore s = similarity(traj, ref);
    EXPECT_NEAR(s.S, 0.81, 1e-12);
    EXPECT_DOUBLE_EQ(s.S, s.cor_theta * s.cor_phi * s.min_norm_sq);
}

TEST(Similarity, InvariantUnderJointStepPermutation) {
    CounterRng rng(2, 0, 0);
    const auto ref = spiral(25);
    std::vector<Vec3> traj;
    for (const auto& r : ref) traj.push_back((r + 0.2 * Vec3(rng.normal(), rng.normal(), rng.normal())).normalized() * 0.95);
    std::vector<std::size_t> perm(ref.size());
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[static_cast<std::uint32_t>(rng()) % (i + 1)]);
    std::vector<Vec3> pr, pt;
    for (auto i : perm) {
        pr.push_back(ref[i]);
        pt.push_back(traj[i]);
    }
    EXPECT_NEAR(similarity(pt, pr).S, similarity(traj, ref).S, 1e-12);
}

TEST(Similarity, BranchCutDoesNotDecorrelate) {
    // Reference azimuths just below pi, simulated ones just across the cut.
    std::vector<Vec3> ref, traj;
    for (int i = 0; i < 10; ++i) {
        const double th = 0.5 + 0.2 * i;
        const double ph = kPi - 0.05 - 0.02 * i;
        ref.push_back(bloch_from_angles(th, ph));
        traj.push_back(bloch_from_angles(th, ph + (i % 2 ? 0.08 : 0.0)));
    }
    const SimilarityScore s = similarity(traj, ref);
    ASSERT_TRUE(s.valid());
    EXPECT_GT(s.cor_phi, 0.5);
}

TEST(Similarity, ConstantAnglesAreFlagged) {
    std::vector<Vec3> equator, fixed;
    for (int i = 0; i < 6; ++i) {
        equator.push_back(bloch_from_angles(0.5 * kPi, 0.3 * i));
        fixed.push_back(Vec3::UnitY());
    }
    const SimilarityScore a = similarity(equator, equator);
    EXPECT_EQ(a.flag, SimilarityFlag::degenerate_theta);
    EXPECT_TRUE(std::isnan(a.S));
    std::vector<Vec3> meridian;
    for (int i = 0; i < 6; ++i) meridian.push_back(bloch_from_angles(0.2 + 0.3 * i, 0.7));
    const SimilarityScore b = similarity(meridian, meridian);
    EXPECT_EQ(b.flag, SimilarityFlag::degenerate_phi);
    EXPECT_FALSE(b.valid());
    EXPECT_STREQ(to_string(b.flag), "zero_variance_phi");
    EXPECT_EQ(similarity(fixed, fixed).flag, SimilarityFlag::degenerate_theta);
}

TEST(Similarity, RejectsBadLengths) {
    EXPECT_THROW(similarity(spiral(5), spiral(6)), ParameterError);
    EXPECT_THROW(similarity(spiral(2), spiral(2)), ParameterError);
}

TEST(Similarity, SummaryIgnoresFlaggedRows) {
    std::vector<SimilarityRow> rows(4);
    rows[0].score.S = 0.2;
    rows[1].score.S = 0.9;
    rows[2].score.flag = SimilarityFlag::degenerate_theta;
    rows[3].score.S = 0.5;
    const auto s = summarize_similarity(rows);
    EXPECT_EQ(s.n_valid, 3u);
    EXPECT_EQ(s.n_flagged, 1u);
    EXPECT_NEAR(s.mean, 1.6 / 3.0, 1e-15);
    EXPECT_DOUBLE_EQ(s.median, 0.5);
    rows.pop_back();
    EXPECT_DOUBLE_EQ(summarize_similarity(rows).median, 0.55);
}

// ------------------------------------------------------------------- config

TEST(Config, DefaultsFromEmptyFile) {
    const RunConfig cfg = parse_config_string("");
    EXPECT_EQ(cfg.protocol.n_atoms, 1000);
    EXPECT_DOUBLE_EQ(cfg.protocol.k, 1.5);
    EXPECT_EQ(cfg.run.engine, EngineKind::hp);
    EXPECT_EQ(cfg.sweep.sigma_over_sqrtJ.size(), 21u);
    EXPECT_NEAR(cfg.sweep.sigma_over_sqrtJ.front(), 0.1, 1e-15);
    EXPECT_NEAR(cfg.sweep.sigma_over_sqrtJ.back(), 10.0, 1e-12);
    EXPECT_EQ(cfg.initial_conditions().size(), 100u);
    EXPECT_NEAR(cfg.resolved_protocol().sigma, 0.9 * std::sqrt(500.0), 1e-12);
}

TEST(Config, ParsesAllSections) {
    const RunConfig cfg = parse_config_string(R"(
; comment line
[protocol]
k = 2.5
p = 1.5
sigma_over_sqrtJ = 4.0
N = 1e7
n_steps = 12

[atomlight]
sigma0_over_A = 2e-4
gamma_s = 3
dt_factor = 25
decoherence = true

[lyapunov]
d0 = 1e-7
n_shadows = 2
renorm_interval = 3
ic_grid_size = 50
n_steps = 80
k_values = 1, 2.5, 8

[run]
engine = classical
seed = 18446744073709551615
threads = 3
n_trajectories = 2
ics = 0.5,0.1; 1.0, 2.0
format = jsonl
out = results
record_covariance = yes

[sweep]
sigma_over_sqrtJ = 0.5, 1, 2
od = 30, 300
realizations = 2
)");
    EXPECT_DOUBLE_EQ(cfg.protocol.k, 2.5);
    EXPECT_EQ(cfg.protocol.n_atoms, 10000000);
    EXPECT_EQ(cfg.protocol.n_steps, 12);
    EXPECT_DOUBLE_EQ(cfg.sigma_over_sqrtJ, 4.0);
    EXPECT_TRUE(cfg.atomlight.decoherence);
    EXPECT_EQ(cfg.atomlight.dt_factor, 25);
    EXPECT_DOUBLE_EQ(cfg.atomlight.od(cfg.protocol.n_atoms), 2000.0);
    EXPECT_EQ(cfg.lyapunov.options.n_shadows, 2);
    EXPECT_EQ(cfg.lyapunov.k_values, (std::vector<double>{1, 2.5, 8}));
    EXPECT_EQ(cfg.run.engine, EngineKind::classical);
    EXPECT_EQ(cfg.run.seed, 18446744073709551615ull);
    EXPECT_EQ(cfg.run.threads, 3u);
    ASSERT_EQ(cfg.run.ics.size(), 2u);
    EXPECT_LT((cfg.run.ics[1] - bloch_from_angles(1.0, 2.0)).norm(), 1e-15);
    EXPECT_EQ(cfg.run.format, OutputFormat::jsonl);
    EXPECT_EQ(cfg.run.out, "results");
    EXPECT_TRUE(cfg.run.record_covariance);
    EXPECT_EQ(cfg.sweep.od, (std::vector<double>{30, 300}));
    EXPECT_EQ(cfg.sweep.realizations, 2);
}

TEST(Config, KRangeExpandsInclusively) {
    const RunConfig cfg = parse_config_string("[lyapunov]\nk_min = 0\nk_max = 10\nk_step = 0.5\n");
    ASSERT_EQ(cfg.lyapunov.k_values.size(), 21u);
    EXPECT_DOUBLE_EQ(cfg.lyapunov.k_values.back(), 10.0);
}

TEST(Config, ErrorsCarryKeyPaths) {
    EXPECT_EQ(config_error("[protocol]\nkk = 1\n").key_path(), "protocol.kk");
    EXPECT_EQ(config_error("[protocol]\nk = fast\n").key_path(), "protocol.k");
    EXPECT_EQ(config_error("[protocol]\nN = 0\n").key_path(), "protocol.N");
    EXPECT_EQ(config_error("[protocol]\nN = 2.5\n").key_path(), "protocol.N");
    EXPECT_EQ(config_error("[protocol]\nsigma_over_sqrtJ = -1\n").key_path(), "protocol.sigma_over_sqrtJ");
    EXPECT_EQ(config_error("[extras]\na = 1\n").key_path(), "extras");
    EXPECT_EQ(config_error("[atomlight]\ndt_factor = 10\n").key_path(), "atomlight.dt_factor");
    EXPECT_EQ(config_error("[atomlight]\ndecoherence = maybe\n").key_path(), "atomlight.decoherence");
    EXPECT_EQ(config_error("[lyapunov]\nk_min = 0\nk_max = 1\n").key_path(), "lyapunov.k_step");
    EXPECT_EQ(config_error("[lyapunov]\nk_values = 1\nk_step = 1\n").key_path(), "lyapunov.k_values");
    EXPECT_EQ(config_error("[run]\nengine = warp\n").key_path(), "run.engine");
    EXPECT_EQ(config_error("[run]\nseed = -3\n").key_path(), "run.seed");
    EXPECT_EQ(config_error("[run]\nthreads = 0\n").key_path(), "run.threads");
    EXPECT_EQ(config_error("[run]\nics = 0.1\n").key_path(), "run.ics");
    EXPECT_EQ(config_error("[run]\nics = 0.1,0.2\nic_grid_size = 4\n").key_path(), "run.ics");
    EXPECT_EQ(config_error("[run]\nformat = xml\n").key_path(), "run.format");
    EXPECT_EQ(config_error("[sweep]\nod = 30, -1\n").key_path(), "sweep.od");
    EXPECT_EQ(config_error("[protocol\nk = 1\n").key_path(), "");
}

// ----------------------------------------------------------------------- io

TEST(Io, DoublesRoundTrip) {
    CounterRng rng(3, 0, 0);
    for (int i = 0; i < 1000; ++i) {
        const double v = rng.normal() * std::pow(10.0, static_cast<int>(static_cast<std::uint32_t>(rng()) % 40) - 20);
        EXPECT_EQ(std::stod(format_double(v)), v);
    }
    EXPECT_EQ(format_double(std::nan("")), "nan");
    EXPECT_EQ(format_double(-INFINITY), "-inf");
}

TEST(Io, CsvAndJsonl) {
    Table t;
    t.columns = {"a", "b", "c"};
    t.add({1LL, 0.1, std::string("x")});
    t.add({2LL, std::nan(""), std::string("y")});
    EXPECT_THROW(t.add({1LL}), ParameterError);
    EXPECT_EQ(render_table(t, OutputFormat::csv), "a,b,c\n1,0.10000000000000001,x\n2,nan,y\n");
    std::istringstream lines(render_table(t, OutputFormat::jsonl));
    std::string line;
    std::getline(lines, line);
    const auto first = nlohmann::json::parse(line);
    EXPECT_EQ(first["a"], 1);
    EXPECT_EQ(first["b"].get<double>(), 0.1);
    std::getline(lines, line);
    EXPECT_TRUE(nlohmann::json::parse(line)["b"].is_null());
}

TEST(Io, TrajectoryCsvRoundTrip) {
    ProtocolParams prm;
    prm.n_atoms = 100000;
    prm.sigma = 0.9 * std::sqrt(prm.j());
    prm.n_steps = 7;
    const auto data = phase_portrait(EngineKind::hp, prm, spiral(3), 5, 1, 2, {true, 0.0});
    const Table t = trajectory_table(data.records, data.ic_ids, true);
    EXPECT_EQ(t.columns.size(), 13u);
    std::istringstream in(render_table(t, OutputFormat::csv));
    const auto paths = read_trajectory_csv(in);
    ASSERT_EQ(paths.size(), 6u);
    for (std::size_t r = 0; r < paths.size(); ++r) {
        EXPECT_EQ(paths[r].ic_id, static_cast<long long>(r / 2));
        EXPECT_EQ(paths[r].n, data.records[r].path());
    }
    std::istringstream bad("ic_id,trajectory,step\n0,0,1\n");
    EXPECT_THROW(read_trajectory_csv(bad), ParameterError);
}

TEST(Io, AtomicWriteLeavesNoPartialFile) {
    const auto dir = scratch_dir("atomic");
    write_file_atomic(dir / "sub" / "x.csv", "hello\n");
    EXPECT_EQ(slurp(dir / "sub" / "x.csv"), "hello\n");
    EXPECT_FALSE(std::filesystem::exists(dir / "sub" / "x.csv.partial"));
}

// ------------------------------------------------------------------ engines

TEST(Engines, ParseAndCapacity) {
    EXPECT_EQ(parse_engine("quantum"), EngineKind::quantum);
    EXPECT_THROW(parse_engine("qm"), ParameterError);
    EXPECT_NO_THROW(require_engine_supports(EngineKind::quantum, 10000));
    EXPECT_THROW(require_engine_supports(EngineKind::quantum, 10001), EngineMismatchError);
    EXPECT_NO_THROW(require_engine_supports(EngineKind::hp, 1000000000));
}

TEST(Engines, ClassicalRecordMatchesMap) {
    ProtocolParams prm;
    prm.k = 2.0;
    prm.n_steps = 10;
    const Vec3 ic = bloch_from_angles(0.8, 0.1);
    const auto rec = simulate_trajectory(EngineKind::classical, prm, ic, {});
    EXPECT_NO_THROW(rec.validate());
    EXPECT_EQ(rec.path(), ckt_path(ic, prm.k, prm.p, 10));
    EXPECT_NEAR(rec.rows[0].m, prm.j() * ic.z(), 1e-12);
}

TEST(Engines, QuantumAndHpAgreeOnMeanAtModerateN) {
    ProtocolParams prm;
    prm.n_atoms = 400;
    prm.sigma = 0.9 * std::sqrt(prm.j());
    prm.n_steps = 5;
    const Vec3 ic = bloch_from_angles(1.0, 0.5);
    const auto q = simulate_trajectory(EngineKind::quantum, prm, ic, {3, 0}, {true, 0.0});
    EXPECT_NO_THROW(q.validate());
    ASSERT_TRUE(q.rows.back().V.has_value());
    prm.n_atoms = 20000;
    EXPECT_THROW(simulate_trajectory(EngineKind::quantum, prm, ic, {}), EngineMismatchError);
    EXPECT_THROW(simulate_trajectory(EngineKind::classical, prm, ic, {}, {false, 0.1}), EngineMismatchError);
}

TEST(Engines, SameSeedSameRecord) {
    ProtocolParams prm;
    prm.n_atoms = 5000;
    prm.sigma = std::sqrt(prm.j());
    prm.n_steps = 20;
    const Vec3 ic = bloch_from_angles(1.3, -0.4);
    const auto a = simulate_trajectory(EngineKind::hp, prm, ic, {7, 3});
    const auto b = simulate_trajectory(EngineKind::hp, prm, ic, {7, 3});
    const auto c = simulate_trajectory(EngineKind::hp, prm, ic, {7, 4});
    EXPECT_EQ(a.path(), b.path());
    EXPECT_NE(a.path(), c.path());
}

// ------------------------------------------------------------------ drivers

TEST(Drivers, PortraitIndependentOfThreadCount) {
    ProtocolParams prm;
    prm.n_atoms = 10000;
    prm.sigma = 0.9 * std::sqrt(prm.j());
    prm.n_steps = 15;
    const auto ics = fibonacci_sphere(30);
    const auto a = phase_portrait(EngineKind::hp, prm, ics, 11, 1, 2);
    const auto b = phase_portrait(EngineKind::hp, prm, ics, 11, 4, 2);
    EXPECT_EQ(render_table(trajectory_table(a.records, a.ic_ids, false), OutputFormat::csv),
              render_table(trajectory_table(b.records, b.ic_ids, false), OutputFormat::csv));
}

TEST(Drivers, SigmaSweepShape) {
    ProtocolParams prm;
    prm.n_atoms = 1000;
    prm.n_steps = 10;
    const auto pts = sweep_sigma(EngineKind::hp, prm, {0.2, 1.0, 5.0}, fibonacci_sphere(10), 3, 1, 2);
    ASSERT_EQ(pts.size(), 3u);
    for (const auto& p : pts) {
        EXPECT_EQ(p.n_samples, 30u);
        EXPECT_GT(p.mean_d_max, 0.0);
        EXPECT_GT(p.ic_std_error, 0.0);
        EXPECT_GT(p.realization_sd, 0.0);
    }
    EXPECT_LT(pts[1].mean_d_max, pts[2].mean_d_max);
}

TEST(Drivers, OdSweepPumpingFollowsOd) {
    ProtocolParams prm;
    prm.n_steps = 10;
    AtomLightConfig al;
    const auto pts = sweep_od(prm, 4.0, {30, 300}, al, fibonacci_sphere(10), 1, 1, 1);
    ASSERT_EQ(pts.size(), 2u);
    EXPECT_EQ(pts[0].n_atoms, 100000);
    EXPECT_EQ(pts[1].n_atoms, 1000000);
    EXPECT_NEAR(pts[0].gamma_s_T / pts[1].gamma_s_T, 10.0, 1e-9);
    EXPECT_NEAR(pts[1].gamma_s_T, 1.0 / (16.0 * 0.5 * 1e6 * 3e-4), 1e-15);
}

TEST(Drivers, LyapunovRejectsQuantumEngine) {
    EXPECT_THROW(lyapunov_sweep(EngineKind::quantum, ProtocolParams{}, {1.0}, LyapunovConfig{}, 0, 1),
                 EngineMismatchError);
}

TEST(Drivers, AveragedPathStaysPhysical) {
    ProtocolParams prm;
    prm.n_atoms = 20;
    prm.k = 3.0;
    prm.sigma = 0.9 * std::sqrt(prm.j());
    prm.n_steps = 4;
    const auto path = averaged_path(prm, bloch_from_angles(1.0, 0.2));
    ASSERT_EQ(path.size(), 4u);
    for (const auto& rho : path) EXPECT_NO_THROW(rho.validate());
    EXPECT_LT(path.back().purity(), 1.0);
}

TEST(Drivers, SmeTrajectoryRows) {
    ProtocolParams prm;
    prm.n_atoms = 8;
    prm.sigma = std::sqrt(prm.j());
    prm.n_steps = 3;
    AtomLightConfig al;
    al.decoherence = true;
    // At the default cross section a tiny ensemble is optically thin and
    // pumping per substep exceeds one.
    EXPECT_THROW(sme_trajectory(prm, al, bloch_from_angles(1.0, 0.0), {2, 0}), IntegratorStepError);
    al.sigma0_over_A = 0.5;
    const auto rows = sme_trajectory(prm, al, bloch_from_angles(1.0, 0.0), {2, 0});
    ASSERT_EQ(rows.size(), 3u);
    for (const auto& r : rows) {
        EXPECT_LE(r.n.norm(), 1.0 + 1e-9);
        EXPECT_LE(r.purity, 1.0 + 1e-9);
    }
}

// ------------------------------------------------------------- run_ensemble

TEST(RunEnsemble, MinimalTrajectoryConfig) {
    const auto dir = scratch_dir("minimal");
    RunConfig cfg = parse_config_string("[protocol]\nn_steps = 10\n[run]\nengine = classical\nics = 1.0,0.5\nout = " +
                                        dir.string() + "\n");
    const RunSummary s = run_ensemble(cfg, Command::trajectory);
    ASSERT_EQ(s.outputs.size(), 1u);
    const std::string text = slurp(s.outputs[0]);
    EXPECT_EQ(count_lines(text), 11u);  // header + 10 rows
    EXPECT_EQ(s.counts.at("rows"), 10);
    const auto summary = nlohmann::json::parse(slurp(dir / "trajectory.summary.jsonl"));
    EXPECT_EQ(summary["command"], "trajectory");
    EXPECT_EQ(summary["seed"], 0);
    EXPECT_EQ(std::distance(std::filesystem::directory_iterator(dir), std::filesystem::directory_iterator{}), 2);
}

TEST(RunEnsemble, LyapunovSweepTable) {
    const auto dir = scratch_dir("lyapunov");
    RunConfig cfg = parse_config_string(
        "[lyapunov]\nk_min = 0\nk_max = 10\nk_step = 0.5\nic_grid_size = 8\nn_steps = 50\n"
        "[run]\nengine = classical\nformat = jsonl\nout = " +
        dir.string() + "\n");
    const RunSummary s = run_ensemble(cfg, Command::lyapunov);
    std::istringstream lines(slurp(s.outputs[0]));
    std::string line;
    std::vector<double> ks;
    while (std::getline(lines, line)) ks.push_back(nlohmann::json::parse(line)["k"].get<double>());
    ASSERT_EQ(ks.size(), 21u);
    EXPECT_DOUBLE_EQ(ks[3], 1.5);
}

TEST(RunEnsemble, OutputsIndependentOfThreads) {
    for (Command c : {Command::portrait, Command::similarity, Command::sweep_sigma, Command::sme}) {
        std::string reference;
        for (unsigned threads : {1u, 3u}) {
            const auto dir = scratch_dir(std::string("threads_") + to_string(c) + std::to_string(threads));
            RunConfig cfg = parse_config_string(
                "[protocol]\nN = 6\nn_steps = 6\n[atomlight]\nsigma0_over_A = 0.5\n[run]\nseed = 99\nic_grid_size = 6\n"
                "[sweep]\nsigma_over_sqrtJ = 0.5, 2\nrealizations = 2\n");
            cfg.run.threads = threads;
            cfg.run.out = dir.string();
            const std::string text = slurp(run_ensemble(cfg, c).outputs[0]);
            if (reference.empty()) {
                reference = text;
            } else {
                EXPECT_EQ(text, reference) << to_string(c);
            }
        }
    }
}

TEST(RunEnsemble, EngineMismatches) {
    RunConfig cfg = parse_config_string("[protocol]\nN = 1e6\n[run]\nengine = quantum\nic_grid_size = 2\n");
    cfg.run.out = scratch_dir("mismatch").string();
    EXPECT_THROW(run_ensemble(cfg, Command::portrait), EngineMismatchError);
    cfg.run.engine = EngineKind::classical;
    EXPECT_THROW(run_ensemble(cfg, Command::sweep_od), EngineMismatchError);
    EXPECT_TRUE(std::filesystem::is_empty(cfg.run.out));
}

TEST(RunEnsemble, SimilarityFromFiles) {
    const auto dir = scratch_dir("simfiles");
    RunConfig cfg = parse_config_string("[protocol]\nN = 1e6\nn_steps = 8\n[run]\nic_grid_size = 5\nout = " +
                                        dir.string() + "\n");
    const std::string hp = run_ensemble(cfg, Command::portrait).outputs[0];
    std::filesystem::rename(hp, dir / "hp.csv");
    cfg.run.engine = EngineKind::classical;
    const std::string cl = run_ensemble(cfg, Command::portrait).outputs[0];
    const RunSummary s = run_ensemble(cfg, Command::similarity, {(dir / "hp.csv").string(), cl});
    EXPECT_EQ(s.counts.at("ics"), 5);
    EXPECT_THROW(run_ensemble(cfg, Command::similarity, {(dir / "hp.csv").string(), ""}), ConfigError);
}
