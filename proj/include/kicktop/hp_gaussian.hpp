#pragma once

// Large-N protocol simulation with a Gaussian state on the Holstein-Primakoff
// plane co-moving with the mean spin. The state is the normalized mean
// n = <J>/J and the covariance V_ab = (<{Ja,Jb}> - 2<Ja><Jb>) / (2J).
//
// One measurement of Jz with resolution sigma acts on the plane as
//   1. Gaussian conditioning on the measured quadrature (Schur complement),
//   2. back-action diffusion of the conjugate quadrature: the Kraus
//      operator is exactly a random rotation about z with angle variance
//      1/(4 sigma^2) on top of the conditioning,
// after which the mean is displaced within the plane and the covariance is
// carried along with it. Feedback is a rigid rotation of (n, V).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <tuple>
#include <utility>

#include "kicktop/errors.hpp"
#include "kicktop/meas_feedback.hpp"
#include "kicktop/rng.hpp"
#include "kicktop/spin_core.hpp"

namespace kicktop {

struct GaussianSpinState {
    Vec3 n = Vec3::UnitZ();
    Mat3 V = Mat3::Zero();
    double j = 1.0;  ///< effective spin, real so N may exceed the Dicke range

    /// Coherent state along (theta, phi): transverse variances 1/2,
    /// longitudinal 0.
    static GaussianSpinState coherent(double theta, double phi, double j) {
        if (!(j > 0.0)) throw ParameterError("effective spin J must be > 0");
        GaussianSpinState g;
        g.n = Vec3(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta));
        g.V = 0.5 * (Mat3::Identity() - g.n * g.n.transpose());
        g.j = j;
        return g;
    }
    static GaussianSpinState coherent(const Vec3& direction, double j) {
        const Vec3 u = direction.normalized();
        return coherent(std::acos(std::clamp(u.z(), -1.0, 1.0)), std::atan2(u.y(), u.x()), j);
    }

    /// Projection noise Delta Jz^2 = J V_zz.
    double dJz2() const { return j * V(2, 2); }

    void validate(double sym_tol = 1e-12, double psd_tol = 1e-10, double norm_tol = 1e-9) const {
        if ((V - V.transpose()).cwiseAbs().maxCoeff() > sym_tol) {
            throw ParameterError("covariance not symmetric");
        }
        const Mat3 sym = 0.5 * (V + V.transpose());
        if (Eigen::SelfAdjointEigenSolver<Mat3>(sym, Eigen::EigenvaluesOnly).eigenvalues().minCoeff() <
            -psd_tol) {
            throw ParameterError("covariance not positive semidefinite");
        }
        if (n.norm() > 1.0 + norm_tol) throw ParameterError("|n| exceeds 1");
    }
};

/// Stochastic corrections of one step: eta1 = (m - J n_z)/sigma^2 displaces
/// the mean within the plane, eta2 = k (m - J n_z)/J perturbs the twist.
struct NoiseDraw {
    double eta1 = 0.0;
    double eta2 = 0.0;
    double sigma1_sq = 0.0;
    double sigma2_sq = 0.0;
    double dJz2 = 0.0;  ///< pre-measurement projection noise
};

/// Variances of eta1 and eta2.
inline std::pair<double, double> noise_variances(double k, double sigma, double j, double dJz2) {
    if (!(sigma > 0.0) || !(j > 0.0) || !(dJz2 >= 0.0)) {
        throw ParameterError("noise_variances needs sigma > 0, J > 0, dJz2 >= 0");
    }
    const double total = sigma * sigma + dJz2;
    return {total / (sigma * sigma * sigma * sigma), k * k * total / (j * j)};
}

/// Rotation taking (e_x, e_y, e_z) to (e_n1, e_n2, n/|n|). e_n1 is along
/// e_z x n (e_x at the poles), e_n2 = n/|n| x e_n1.
inline Mat3 comoving_frame(const Vec3& n) {
    const double len = n.norm();
    if (!(len > 1e-12)) throw FrameDegeneracyError("co-moving frame undefined for |n| ~ 0");
    const Vec3 u = n / len;
    const Vec3 cross = Vec3::UnitZ().cross(u);
    const double c = cross.norm();
    const Vec3 e1 = c > 1e-8 ? Vec3(cross / c) : Vec3(Vec3::UnitX());
    const Vec3 e1_orth = (e1 - e1.dot(u) * u).normalized();
    const Vec3 e2 = u.cross(e1_orth);
    Mat3 a;
    a.col(0) = e1_orth;
    a.col(1) = e2;
    a.col(2) = u;
    return a;
}

namespace detail {

/// Smallest rotation taking unit vector a to unit vector b.
inline Mat3 minimal_rotation(const Vec3& a, const Vec3& b) {
    const Vec3 v = a.cross(b);
    const double c = a.dot(b);
    if (c <= -1.0 + 1e-12) throw NumericalDegeneracyError("antiparallel transport requested");
    Mat3 vx;
    vx << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return Mat3::Identity() + vx + vx * vx / (1.0 + c);
}

inline Mat3 symmetrize(const Mat3& m) { return 0.5 * (m + m.transpose()); }

/// Rescales n to unit length only when it exceeds 1 beyond tolerance.
inline void clamp_norm(Vec3& n) {
    const double len = n.norm();
    if (len > 1.0 + 1e-9) n /= len;
}

}  // namespace detail

struct HpMeasurement {
    GaussianSpinState state;
    double m = 0.0;
    NoiseDraw noise;
};

/// Conditions the Gaussian state on outcome m (prescribed).
inline HpMeasurement hp_condition(const GaussianSpinState& g, double sigma, double m, double k = 0.0) {
    if (!(sigma > 0.0)) throw ParameterError("sigma must be > 0");
    const double s2 = sigma * sigma;
    const double j = g.j;
    const Mat3 a = comoving_frame(g.n);
    const Eigen::Matrix<double, 3, 2> plane = a.leftCols<2>();
    Eigen::Matrix2d v_plane = plane.transpose() * g.V * plane;
    const Eigen::Vector2d h = plane.transpose() * Vec3::UnitZ();  // Jz seen in the plane

    const double dJz2 = j * g.V(2, 2);
    const double innovation_var = s2 + j * h.dot(v_plane * h);
    const double innovation = m - j * g.n.z();
    const Eigen::Vector2d vh = v_plane * h;

    // Conditioning on the measured quadrature.
    const Eigen::Vector2d shift = vh * (innovation / innovation_var);
    v_plane -= (j / innovation_var) * vh * vh.transpose();
    // Back-action on the conjugate quadrature.
    const Vec3 swirl = Vec3::UnitZ().cross(g.n);
    const Eigen::Vector2d swirl_plane = plane.transpose() * swirl;
    v_plane += (j / (4.0 * s2)) * swirl_plane * swirl_plane.transpose();

    HpMeasurement out;
    out.m = m;
    out.noise.dJz2 = dJz2;
    std::tie(out.noise.sigma1_sq, out.noise.sigma2_sq) = noise_variances(k, sigma, j, dJz2);
    out.noise.eta1 = innovation / s2;
    out.noise.eta2 = k * innovation / j;

    GaussianSpinState& next = out.state;
    next.j = j;
    next.n = g.n + plane * shift;
    const Mat3 transport = detail::minimal_rotation(g.n.normalized(), next.n.normalized());
    next.V = detail::symmetrize(transport * (plane * v_plane * plane.transpose()) * transport.transpose());
    detail::clamp_norm(next.n);
    return out;
}

/// Samples m ~ Normal(J n_z, sigma^2 + Delta Jz^2) and conditions on it.
inline HpMeasurement hp_measure_update(const GaussianSpinState& g, double sigma, CounterRng& rng,
                                       double k = 0.0) {
    const double spread = std::sqrt(sigma * sigma + g.dJz2());
    const double m = g.j * g.n.z() + spread * rng.normal();
    return hp_condition(g, sigma, m, k);
}

/// Rigid rotation of mean and covariance.
inline GaussianSpinState rotate_gaussian(const GaussianSpinState& g, const Mat3& r) {
    GaussianSpinState out = g;
    out.n = r * g.n;
    out.V = detail::symmetrize(r * g.V * r.transpose());
    return out;
}

inline FeedbackRotation hp_feedback(double m, double k, double p, double j) {
    return {k * (m / j), p};
}

/// Feedback twist then kick, applied one after the other as in ckt_step.
inline GaussianSpinState apply_feedback(const GaussianSpinState& g, const FeedbackRotation& f) {
    const Mat3 rz = bloch_rotation(Axis::z, f.z_angle);
    const Mat3 ry = bloch_rotation(Axis::y, f.y_angle);
    GaussianSpinState out = g;
    out.n = ry * (rz * g.n);
    out.V = detail::symmetrize(ry * (rz * g.V * rz.transpose()) * ry.transpose());
    return out;
}

/// Full protocol step for a prescribed outcome: condition, then feedback.
inline HpMeasurement hp_step_with_outcome(const GaussianSpinState& g, const ProtocolParams& params,
                                          double m) {
    HpMeasurement out = hp_condition(g, params.sigma, m, params.k);
    out.state = apply_feedback(out.state, hp_feedback(m, params.k, params.p, g.j));
    return out;
}

/// Full protocol step with a sampled outcome. `params.n_atoms` is ignored;
/// the state's own J is used.
inline HpMeasurement hp_step(const GaussianSpinState& g, const ProtocolParams& params, CounterRng& rng) {
    const double spread = std::sqrt(params.sigma * params.sigma + g.dJz2());
    const double m = g.j * g.n.z() + spread * rng.normal();
    return hp_step_with_outcome(g, params, m);
}

}  // namespace kicktop
