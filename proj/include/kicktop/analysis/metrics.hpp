#pragma once

// Trajectory records and the two comparison metrics against classical
// reference paths: the maximum Euclidean distance and the similarity score.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "kicktop/classical_kt.hpp"
#include "kicktop/errors.hpp"
#include "kicktop/meas_feedback.hpp"
#include "kicktop/spin_core.hpp"

namespace kicktop {

struct TrajectoryRow {
    long step = 0;
    double m = 0.0;
    Vec3 n = Vec3::Zero();
    std::optional<Mat3> V;
};

struct SeedProvenance {
    std::uint64_t master_seed = 0;
    std::uint64_t trajectory = 0;
};

struct TrajectoryRecord {
    ProtocolParams params;
    std::string engine;
    Vec3 ic = Vec3::UnitZ();
    SeedProvenance seed;
    std::vector<TrajectoryRow> rows;

    std::size_t size() const { return rows.size(); }

    std::vector<Vec3> path() const {
        std::vector<Vec3> out;
        out.reserve(rows.size());
        for (const auto& r : rows) out.push_back(r.n);
        return out;
    }

    void validate() const {
        if (rows.size() != static_cast<std::size_t>(params.n_steps)) {
            throw ParameterError("trajectory has " + std::to_string(rows.size()) + " rows, expected " +
                                 std::to_string(params.n_steps));
        }
        for (const auto& r : rows) {
            if (r.n.norm() > 1.0 + 1e-9) {
                throw ParameterError("|n| > 1 at step " + std::to_string(r.step));
            }
        }
    }
};

/// max_i |a_i - b_i|.
inline double max_classical_distance(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    if (a.size() != b.size()) {
        throw ParameterError("trajectory length mismatch: " + std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()));
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, (a[i] - b[i]).norm());
    return worst;
}

inline double max_classical_distance(const TrajectoryRecord& traj, const std::vector<Vec3>& reference) {
    return max_classical_distance(traj.path(), reference);
}

enum class SimilarityFlag { ok, degenerate_theta, degenerate_phi };

inline const char* to_string(SimilarityFlag f) {
    switch (f) {
        case SimilarityFlag::ok: return "ok";
        case SimilarityFlag::degenerate_theta: return "zero_variance_theta";
        case SimilarityFlag::degenerate_phi: return "zero_variance_phi";
    }
    return "unknown";
}

struct SimilarityScore {
    double S = std::numeric_limits<double>::quiet_NaN();
    double cor_theta = std::numeric_limits<double>::quiet_NaN();
    double cor_phi = std::numeric_limits<double>::quiet_NaN();
    double min_norm_sq = std::numeric_limits<double>::quiet_NaN();
    SimilarityFlag flag = SimilarityFlag::ok;

    bool valid() const { return flag == SimilarityFlag::ok; }
};

namespace detail {

/// Below this standard deviation an angle sequence is treated as constant.
inline constexpr double kDegenerateAngleSpread = 1e-12;

/// Pearson correlation; nullopt when either sequence has no spread.
inline std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const auto n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    const double floor = kDegenerateAngleSpread * kDegenerateAngleSpread * n;
    if (sxx <= floor || syy <= floor) return std::nullopt;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline double polar_angle(const Vec3& n) {
    const double len = n.norm();
    if (!(len > 0.0)) return 0.0;
    return std::acos(std::clamp(n.z() / len, -1.0, 1.0));
}

}  // namespace detail

/// S = cor(theta_ref, theta) cor(phi_ref, phi) min|n|^2.
///
/// Reference azimuths stay in (-pi, pi]; each simulated azimuth is moved to
/// the 2 pi branch closest to its reference partner, so a small error
/// straddling the branch cut is not read as a full turn. The pairing is per
/// step, which keeps S invariant under joint relabeling of steps.
inline SimilarityScore similarity(const std::vector<Vec3>& traj, const std::vector<Vec3>& reference) {
    if (traj.size() != reference.size()) {
        throw ParameterError("trajectory length mismatch: " + std::to_string(traj.size()) + " vs " +
                             std::to_string(reference.size()));
    }
    if (traj.size() < 3) throw ParameterError("similarity needs at least 3 steps");
    const std::size_t len = traj.size();
    std::vector<double> th(len), th_ref(len), ph(len), ph_ref(len);
    double min_norm_sq = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < len; ++i) {
        th[i] = detail::polar_angle(traj[i]);
        th_ref[i] = detail::polar_angle(reference[i]);
        ph_ref[i] = std::atan2(reference[i].y(), reference[i].x());
        const double raw = std::atan2(traj[i].y(), traj[i].x());
        ph[i] = raw + 2.0 * kPi * std::round((ph_ref[i] - raw) / (2.0 * kPi));
        min_norm_sq = std::min(min_norm_sq, traj[i].squaredNorm());
    }
    SimilarityScore out;
    out.min_norm_sq = min_norm_sq;
    const auto ct = detail::pearson(th_ref, th);
    const auto cp = detail::pearson(ph_ref, ph);
    if (ct) out.cor_theta = *ct;
    if (cp) out.cor_phi = *cp;
    if (!ct) {
        out.flag = SimilarityFlag::degenerate_theta;
    } else if (!cp) {
        out.flag = SimilarityFlag::degenerate_phi;
    } else {
        out.S = out.cor_theta * out.cor_phi * out.min_norm_sq;
    }
    return out;
}

inline SimilarityScore similarity(const TrajectoryRecord& traj, const std::vector<Vec3>& reference) {
    return similarity(traj.path(), reference);
}

/// Classical reference path for steps 1..n_steps from ic.
inline std::vector<Vec3> ckt_path(const Vec3& ic, double k, double p, long n_steps) {
    std::vector<Vec3> out;
    out.reserve(static_cast<std::size_t>(std::max(0L, n_steps)));
    Vec3 n = ic;
    for (long s = 0; s < n_steps; ++s) {
        n = ckt_step(n, k, p);
        out.push_back(n);
    }
    return out;
}

}  // namespace kicktop
