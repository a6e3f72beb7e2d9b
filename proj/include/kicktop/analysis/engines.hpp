#pragma once

// Trajectory engines (classical, Gaussian, full quantum) behind one entry
// point, plus the Gaussian step maps wrapped as Lyapunov generators.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "kicktop/analysis/metrics.hpp"
#include "kicktop/atom_light.hpp"
#include "kicktop/classical_kt.hpp"
#include "kicktop/errors.hpp"
#include "kicktop/hp_gaussian.hpp"
#include "kicktop/meas_feedback.hpp"
#include "kicktop/rng.hpp"
#include "kicktop/spin_core.hpp"

namespace kicktop {

enum class EngineKind { classical, hp, quantum };

inline const char* to_string(EngineKind e) {
    switch (e) {
        case EngineKind::classical: return "classical";
        case EngineKind::hp: return "hp";
        case EngineKind::quantum: return "quantum";
    }
    return "unknown";
}

inline EngineKind parse_engine(std::string_view name) {
    if (name == "classical") return EngineKind::classical;
    if (name == "hp") return EngineKind::hp;
    if (name == "quantum") return EngineKind::quantum;
    throw ParameterError("unknown engine '" + std::string(name) + "' (classical|hp|quantum)");
}

/// Largest ensemble the pure-state engine accepts.
inline constexpr long kMaxQuantumAtoms = 10000;

inline void require_engine_supports(EngineKind engine, long n_atoms) {
    if (engine == EngineKind::quantum && n_atoms > kMaxQuantumAtoms) {
        throw EngineMismatchError("quantum engine is limited to N <= " + std::to_string(kMaxQuantumAtoms) +
                                  " (requested N = " + std::to_string(n_atoms) + "); use the hp engine");
    }
}

struct TrajectoryOptions {
    bool record_covariance = false;
    double gamma_s_T = 0.0;  ///< optical pumping per window (hp engine only)
};

inline Vec3 unit_direction(const Vec3& ic) {
    const double len = ic.norm();
    if (!(len > 1e-12)) throw ParameterError("initial condition must be a nonzero vector");
    return ic / len;
}

namespace detail {

inline CounterRng outcome_stream(const SeedProvenance& seed, long step) {
    return CounterRng(seed.master_seed, static_cast<std::uint32_t>(seed.trajectory),
                      static_cast<std::uint32_t>(step), stream_tag::kOutcome);
}

inline TrajectoryRecord blank_record(EngineKind engine, const ProtocolParams& params, const Vec3& ic,
                                     const SeedProvenance& seed) {
    TrajectoryRecord rec;
    rec.params = params;
    rec.engine = to_string(engine);
    rec.ic = ic;
    rec.seed = seed;
    rec.rows.reserve(static_cast<std::size_t>(params.n_steps));
    return rec;
}

}  // namespace detail

/// Runs params.n_steps protocol steps from the coherent state along `ic`.
/// Row s holds the outcome of step s and the state after it. The classical
/// engine reports m = J Z, the noise-free outcome that reproduces the map.
inline TrajectoryRecord simulate_trajectory(EngineKind engine, const ProtocolParams& params, const Vec3& ic,
                                            const SeedProvenance& seed, const TrajectoryOptions& opts = {}) {
    params.validate();
    require_engine_supports(engine, params.n_atoms);
    if (opts.gamma_s_T < 0.0) throw ParameterError("gamma_s_T must be >= 0");
    if (opts.gamma_s_T > 0.0 && engine != EngineKind::hp) {
        throw EngineMismatchError(std::string("optical pumping is modeled by the hp engine (or the sme command), "
                                              "not the ") + to_string(engine) + " engine");
    }
    const Vec3 u = unit_direction(ic);
    TrajectoryRecord rec = detail::blank_record(engine, params, u, seed);
    const double j = params.j();

    switch (engine) {
        case EngineKind::classical: {
            Vec3 n = u;
            for (long s = 1; s <= params.n_steps; ++s) {
                const double m = j * n.z();
                n = ckt_step(n, params.k, params.p);
                rec.rows.push_back({s, m, n, std::nullopt});
            }
            break;
        }
        case EngineKind::hp: {
            GaussianSpinState g = GaussianSpinState::coherent(u, j);
            for (long s = 1; s <= params.n_steps; ++s) {
                CounterRng rng = detail::outcome_stream(seed, s);
                const HpMeasurement step = opts.gamma_s_T > 0.0
                                               ? hp_step_decoherent(g, params, opts.gamma_s_T, rng)
                                               : hp_step(g, params, rng);
                g = step.state;
                TrajectoryRow row{s, step.m, g.n, std::nullopt};
                if (opts.record_covariance) row.V = g.V;
                rec.rows.push_back(row);
            }
            break;
        }
        case EngineKind::quantum: {
            DickeState psi = make_scs(std::acos(std::clamp(u.z(), -1.0, 1.0)), std::atan2(u.y(), u.x()),
                                      params.spin());
            for (long s = 1; s <= params.n_steps; ++s) {
                CounterRng rng = detail::outcome_stream(seed, s);
                TrajectoryStep step = trajectory_step(psi, params, rng);
                psi = std::move(step.state);
                const SpinMoments mom = expectations(psi);
                TrajectoryRow row{s, step.outcome.m, mom.n, std::nullopt};
                if (opts.record_covariance) row.V = mom.V;
                rec.rows.push_back(row);
            }
            break;
        }
    }
    return rec;
}

/// Gaussian trajectory driven by a prescribed outcome sequence, e.g. the
/// outcomes drawn by a quantum trajectory from the same IC.
inline TrajectoryRecord hp_trajectory_from_outcomes(const ProtocolParams& params, const Vec3& ic,
                                                    const std::vector<double>& outcomes,
                                                    bool record_covariance = false) {
    ProtocolParams p = params;
    p.n_steps = static_cast<long>(outcomes.size());
    p.validate();
    const Vec3 u = unit_direction(ic);
    TrajectoryRecord rec = detail::blank_record(EngineKind::hp, p, u, {});
    GaussianSpinState g = GaussianSpinState::coherent(u, p.j());
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        g = hp_step_with_outcome(g, p, outcomes[i]).state;
        TrajectoryRow row{static_cast<long>(i + 1), outcomes[i], g.n, std::nullopt};
        if (record_covariance) row.V = g.V;
        rec.rows.push_back(row);
    }
    return rec;
}

/// Gaussian protocol step as a Lyapunov generator. Shadows inherit the
/// fiducial covariance, carried to their own direction.
struct HpGenerator {
    using state_type = GaussianSpinState;
    ProtocolParams params;
    double gamma_s_T = 0.0;

    GaussianSpinState make_state(const Vec3& n) const {
        GaussianSpinState g = GaussianSpinState::coherent(n, params.j());
        g.n = n;
        return g;
    }
    Vec3 bloch(const GaussianSpinState& s) const { return s.n; }
    void advance(GaussianSpinState& s, CounterRng& rng) const {
        s = gamma_s_T > 0.0 ? hp_step_decoherent(s, params, gamma_s_T, rng).state : hp_step(s, params, rng).state;
    }
    void place_shadow(GaussianSpinState& s, const GaussianSpinState& ref, const Vec3& n) const {
        const Mat3 r = detail::minimal_rotation(ref.n.normalized(), n.normalized());
        s = ref;
        s.n = n;
        s.V = detail::symmetrize(r * ref.V * r.transpose());
    }
};

static_assert(TrajectoryGenerator<HpGenerator>);
static_assert(TrajectoryGenerator<ClassicalGenerator>);

}  // namespace kicktop
