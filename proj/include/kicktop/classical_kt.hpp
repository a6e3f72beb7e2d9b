#pragma once

// Classical kicked-top map on the sphere and Benettin-style largest
// Lyapunov exponent estimation over any trajectory generator.

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kicktop/errors.hpp"
#include "kicktop/parallel.hpp"
#include "kicktop/rng.hpp"
#include "kicktop/spin_core.hpp"

namespace kicktop {

inline Vec3 bloch_from_angles(double theta, double phi) {
    return {std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta)};
}

/// Twist about z by k n_z, then rotation about y by p. For p = pi/2:
/// X' = -Z, Y' = Y cos kZ - X sin kZ, Z' = X cos kZ + Y sin kZ.
inline Vec3 ckt_step(const Vec3& n, double k, double p) {
    const double twist = k * n.z();
    const double ct = std::cos(twist);
    const double st = std::sin(twist);
    const double x1 = n.x() * ct + n.y() * st;
    const double y1 = n.y() * ct - n.x() * st;
    const double z1 = n.z();
    const double cp = std::cos(p);
    const double sp = std::sin(p);
    return {x1 * cp - z1 * sp, y1, x1 * sp + z1 * cp};
}

/// Near-uniform deterministic lattice of `count` points on the unit sphere.
inline std::vector<Vec3> fibonacci_sphere(std::size_t count) {
    std::vector<Vec3> pts;
    pts.reserve(count);
    const double golden = kPi * (3.0 - std::sqrt(5.0));
    for (std::size_t i = 0; i < count; ++i) {
        const double z = 1.0 - (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(count);
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden * static_cast<double>(i);
        pts.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
    }
    return pts;
}

/// A step map usable for Lyapunov estimation. `advance` consumes draws
/// from the supplied stream; fiducial and shadows receive identically keyed
/// streams, so stochastic generators see common random numbers.
template <class G>
concept TrajectoryGenerator = requires(const G& g, typename G::state_type& s,
                                       const typename G::state_type& ref, const Vec3& n,
                                       CounterRng& rng) {
    { g.make_state(n) } -> std::same_as<typename G::state_type>;
    { g.bloch(ref) } -> std::convertible_to<Vec3>;
    g.advance(s, rng);
    g.place_shadow(s, ref, n);
};

struct ClassicalGenerator {
    using state_type = Vec3;
    double k = 0.0;
    double p = 0.5 * kPi;

    Vec3 make_state(const Vec3& n) const { return n; }
    Vec3 bloch(const Vec3& s) const { return s; }
    void advance(Vec3& s, CounterRng&) const { s = ckt_step(s, k, p); }
    void place_shadow(Vec3& s, const Vec3&, const Vec3& n) const { s = n; }
};

struct LyapunovOptions {
    double d0 = 1e-6;           ///< initial geodesic separation
    int n_shadows = 4;
    int renorm_interval = 1;
    int n_steps = 500;          ///< 500 for classical maps, 100 for stochastic
    std::uint64_t seed = 0;
};

/// Neumaier-compensated running sum.
class CompensatedSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) {
            comp_ += (sum_ - t) + x;
        } else {
            comp_ += (x - t) + sum_;
        }
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

/// Stream id derived from the initial condition itself, so estimates do not
/// depend on where the IC sits in a grid.
inline std::uint32_t ic_stream_id(const Vec3& ic) {
    std::uint64_t h = 0x9E3779B97F4A7C15ull;
    for (int a = 0; a < 3; ++a) {
        h ^= std::bit_cast<std::uint64_t>(ic(a) + 0.0) + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
        h *= 0xBF58476D1CE4E5B9ull;
        h ^= h >> 31;
    }
    return static_cast<std::uint32_t>(h ^ (h >> 32));
}

/// Largest Lyapunov exponent (per step) from one initial condition:
/// shadows start at geodesic distance d0 along random tangent directions,
/// are renormalized to d0 every `renorm_interval` steps, and the exponent is
/// the mean over shadows of (1/T) sum log(d / d0). Distances are chords
/// between unit directions, so a common shrinking of |n| does not count as
/// convergence.
template <TrajectoryGenerator G>
double local_lyapunov(const G& gen, const Vec3& ic, const LyapunovOptions& opts) {
    if (!(opts.d0 > 0.0)) throw ParameterError("d0 must be > 0");
    if (opts.n_shadows < 1 || opts.renorm_interval < 1 || opts.n_steps < 1) {
        throw ParameterError("n_shadows, renorm_interval and n_steps must be >= 1");
    }
    const std::uint32_t stream = ic_stream_id(ic);
    const double radius = ic.norm();
    if (!(radius > 1e-12)) throw ParameterError("initial condition must be nonzero");

    auto fiducial = gen.make_state(ic);
    std::vector<typename G::state_type> shadows;
    shadows.reserve(static_cast<std::size_t>(opts.n_shadows));
    CounterRng dir_rng(opts.seed, stream, 0, stream_tag::kShadowDirections);
    const Vec3 u = ic / radius;
    for (int s = 0; s < opts.n_shadows; ++s) {
        Vec3 dir;
        do {
            dir = Vec3(dir_rng.normal(), dir_rng.normal(), dir_rng.normal());
            dir -= dir.dot(u) * u;
        } while (dir.norm() < 1e-6);
        dir.normalize();
        const Vec3 start = radius * (std::cos(opts.d0) * u + std::sin(opts.d0) * dir);
        shadows.push_back(gen.make_state(start));
    }

    std::vector<CompensatedSum> log_growth(shadows.size());
    auto renormalize = [&](int step) {
        const Vec3 f = gen.bloch(fiducial);
        const double f_len = f.norm();
        if (!(f_len > 1e-12)) throw NumericalDegeneracyError("fiducial Bloch vector vanished");
        const Vec3 f_dir = f / f_len;
        for (std::size_t s = 0; s < shadows.size(); ++s) {
            const Vec3 sh = gen.bloch(shadows[s]);
            const double sh_len = sh.norm();
            const Vec3 delta = sh_len > 0.0 ? Vec3(sh / sh_len - f_dir) : Vec3(-f_dir);
            const double d = delta.norm();
            if (!(d > 0.0) || !std::isfinite(d)) {
                throw NumericalDegeneracyError("shadow " + std::to_string(s) + " collapsed at step " +
                                               std::to_string(step) + " (distance " + std::to_string(d) +
                                               ")");
            }
            log_growth[s].add(std::log(d / opts.d0));
            const Vec3 placed = f_len * (f_dir + (opts.d0 / d) * delta).normalized();
            gen.place_shadow(shadows[s], fiducial, placed);
        }
    };

    for (int step = 1; step <= opts.n_steps; ++step) {
        const StreamKey key{opts.seed, stream, static_cast<std::uint32_t>(step), stream_tag::kOutcome};
        CounterRng rng(key);
        gen.advance(fiducial, rng);
        for (auto& s : shadows) {
            CounterRng shadow_rng(key);
            gen.advance(s, shadow_rng);
        }
        if (step % opts.renorm_interval == 0 || step == opts.n_steps) renormalize(step);
    }

    CompensatedSum total;
    for (const auto& g : log_growth) total.add(g.value());
    return total.value() / (static_cast<double>(opts.n_steps) * static_cast<double>(shadows.size()));
}

struct LyapunovEstimate {
    double lambda_largest = 0.0;
    double variance = 0.0;       ///< spread of local exponents across ICs
    double std_error = 0.0;      ///< sqrt(variance / n_valid)
    std::vector<double> local;   ///< NaN where the IC failed
    std::vector<std::optional<std::string>> failures;
    std::size_t n_valid = 0;
    LyapunovOptions settings;
};

/// Mean of local exponents over an IC grid. Per-IC failures are recorded
/// and excluded; they never abort the aggregate.
template <TrajectoryGenerator G>
LyapunovEstimate estimate_lyapunov(const G& gen, const std::vector<Vec3>& ic_grid,
                                   const LyapunovOptions& opts, unsigned threads = 1) {
    if (ic_grid.empty()) throw ParameterError("IC grid must be nonempty");
    LyapunovEstimate est;
    est.settings = opts;
    est.local.assign(ic_grid.size(), std::nan(""));
    est.failures.assign(ic_grid.size(), std::nullopt);
    parallel_for(ic_grid.size(), threads, [&](std::size_t i) {
        try {
            est.local[i] = local_lyapunov(gen, ic_grid[i], opts);
        } catch (const std::exception& e) {
            est.failures[i] = e.what();
        }
    });
    CompensatedSum sum;
    for (std::size_t i = 0; i < ic_grid.size(); ++i) {
        if (!est.failures[i]) {
            sum.add(est.local[i]);
            ++est.n_valid;
        }
    }
    if (est.n_valid == 0) {
        est.lambda_largest = std::nan("");
        est.variance = std::nan("");
        est.std_error = std::nan("");
        return est;
    }
    est.lambda_largest = sum.value() / static_cast<double>(est.n_valid);
    CompensatedSum sq;
    for (std::size_t i = 0; i < ic_grid.size(); ++i) {
        if (!est.failures[i]) {
            const double d = est.local[i] - est.lambda_largest;
            sq.add(d * d);
        }
    }
    est.variance = est.n_valid > 1 ? sq.value() / static_cast<double>(est.n_valid - 1) : 0.0;
    est.std_error = std::sqrt(est.variance / static_cast<double>(est.n_valid));
    return est;
}

}  // namespace kicktop
