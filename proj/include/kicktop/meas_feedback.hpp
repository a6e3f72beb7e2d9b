#pragma once

// Gaussian weak measurement of Jz, outcome-conditioned feedback rotations,
// full-quantum trajectory stepping, the kicked-top Floquet map and the
// exact outcome-averaged (dephased) map.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>

#include "kicktop/errors.hpp"
#include "kicktop/rng.hpp"
#include "kicktop/spin_core.hpp"

namespace kicktop {

/// Largest J for which dense density-matrix maps are offered.
inline constexpr double kMaxDensityMatrixJ = 200.0;

struct ProtocolParams {
    double k = 1.5;          ///< twist strength
    double p = 0.5 * kPi;    ///< kick angle about y
    double sigma = 1.0;      ///< measurement resolution, in units of Jz eigenvalues
    long n_atoms = 1000;     ///< N, with J = N/2
    long n_steps = 0;

    Spin spin() const { return Spin::from_atoms(n_atoms); }
    double j() const { return 0.5 * static_cast<double>(n_atoms); }

    void validate() const {
        if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ParameterError("sigma must be > 0");
        if (n_atoms < 1) throw ParameterError("N must be >= 1");
        if (n_steps < 0) throw ParameterError("n_steps must be >= 0");
        if (!std::isfinite(k) || !std::isfinite(p)) throw ParameterError("k and p must be finite");
    }
};

/// Mixed collective-spin state.
class DensityMatrix {
public:
    DensityMatrix(Spin spin, Eigen::MatrixXcd rho) : spin_(spin), rho_(std::move(rho)) {
        const auto d = static_cast<Eigen::Index>(spin.dim());
        if (rho_.rows() != d || rho_.cols() != d) {
            throw ParameterError("density matrix must be (2J+1) x (2J+1)");
        }
    }
    explicit DensityMatrix(const DickeState& psi)
        : DensityMatrix(psi.spin(), psi.amplitudes() * psi.amplitudes().adjoint()) {}

    Spin spin() const { return spin_; }
    double j() const { return spin_.value(); }
    std::size_t dim() const { return spin_.dim(); }
    const Eigen::MatrixXcd& matrix() const { return rho_; }
    Eigen::MatrixXcd& matrix() { return rho_; }

    double trace() const { return rho_.trace().real(); }
    double purity() const { return (rho_ * rho_).trace().real(); }
    double hermiticity_error() const { return (rho_ - rho_.adjoint()).cwiseAbs().maxCoeff(); }
    double min_eigenvalue() const {
        const Eigen::MatrixXcd h = 0.5 * (rho_ + rho_.adjoint());
        return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd>(h, Eigen::EigenvaluesOnly)
            .eigenvalues()
            .minCoeff();
    }

    /// Throws ParameterError unless trace, Hermiticity and positivity hold.
    void validate(double trace_tol = 1e-10, double herm_tol = 1e-12, double eig_tol = 1e-10) const {
        if (std::abs(trace() - 1.0) > trace_tol) throw ParameterError("density matrix trace != 1");
        if (hermiticity_error() > herm_tol) throw ParameterError("density matrix not Hermitian");
        if (min_eigenvalue() < -eig_tol) throw ParameterError("density matrix not positive");
    }

    /// Tr(rho J) / J.
    Vec3 bloch() const {
        Vec3 n;
        const Axis axes[3] = {Axis::x, Axis::y, Axis::z};
        for (int a = 0; a < 3; ++a) {
            n(a) = (rho_ * collective_op(axes[a], spin_).to_dense()).trace().real() / j();
        }
        return n;
    }

    double mean_jz() const {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < rho_.rows(); ++i) {
            acc += rho_(i, i).real() * spin_.m_of(static_cast<std::size_t>(i));
        }
        return acc;
    }

private:
    Spin spin_;
    Eigen::MatrixXcd rho_;
};

/// Half the trace norm of a - b.
inline double trace_distance(const Eigen::MatrixXcd& a, const Eigen::MatrixXcd& b) {
    const Eigen::MatrixXcd diff = a - b;
    const Eigen::MatrixXcd h = 0.5 * (diff + diff.adjoint());
    const Eigen::VectorXd ev =
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd>(h, Eigen::EigenvaluesOnly).eigenvalues();
    return 0.5 * ev.cwiseAbs().sum();
}

inline double trace_distance(const DensityMatrix& a, const DensityMatrix& b) {
    return trace_distance(a.matrix(), b.matrix());
}

struct MeasurementOutcome {
    double m = 0.0;
};

/// Diagonal of K_m = (2 pi sigma^2)^{-1/4} exp(-(Jz - m)^2 / (4 sigma^2)).
inline Eigen::VectorXd kraus_diagonal(Spin spin, double m, double sigma) {
    if (!(sigma > 0.0)) throw ParameterError("sigma must be > 0");
    const auto d = static_cast<Eigen::Index>(spin.dim());
    const double prefactor = std::pow(2.0 * kPi * sigma * sigma, -0.25);
    Eigen::VectorXd k(d);
    for (Eigen::Index i = 0; i < d; ++i) {
        const double dz = spin.m_of(static_cast<std::size_t>(i)) - m;
        k(i) = prefactor * std::exp(-dz * dz / (4.0 * sigma * sigma));
    }
    return k;
}

/// Outcome density P_m = <psi| K_m^dagger K_m |psi>, a mixture of
/// Normal(m_z, sigma^2) weighted by |c_{m_z}|^2.
inline double outcome_density(const DickeState& state, double m, double sigma) {
    const auto& a = state.amplitudes();
    const double norm = 1.0 / std::sqrt(2.0 * kPi * sigma * sigma);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double dz = state.m_of(static_cast<std::size_t>(i)) - m;
        acc += std::norm(a(i)) * std::exp(-dz * dz / (2.0 * sigma * sigma));
    }
    return norm * acc;
}

/// Draws m ~ P_m exactly: a Dicke label with probability |c|^2, then
/// Gaussian meter noise of standard deviation sigma.
inline MeasurementOutcome sample_outcome(const DickeState& state, double sigma, CounterRng& rng) {
    if (!(sigma > 0.0)) throw ParameterError("sigma must be > 0");
    const auto& a = state.amplitudes();
    const double u = rng.uniform() * state.norm2();
    double cumulative = 0.0;
    Eigen::Index pick = a.size() - 1;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        cumulative += std::norm(a(i));
        if (u < cumulative) {
            pick = i;
            break;
        }
    }
    return {state.m_of(static_cast<std::size_t>(pick)) + sigma * rng.normal()};
}

/// Squared norm of exp(-(Jz - m)^2 / (4 sigma^2)) |psi>, i.e. P_m without
/// the (2 pi sigma^2)^{-1/2} prefactor.
inline double kraus_branch_norm2(const DickeState& state, double m, double sigma) {
    return outcome_density(state, m, sigma) * std::sqrt(2.0 * kPi * sigma * sigma);
}

/// Quantum Bayes update with the Gaussian Kraus operator for outcome m.
inline DickeState apply_kraus(const DickeState& state, double m, double sigma) {
    if (!(sigma > 0.0)) throw ParameterError("sigma must be > 0");
    if (!std::isfinite(m)) throw ParameterError("measurement outcome must be finite");
    Eigen::VectorXcd a = state.amplitudes();
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double dz = state.m_of(static_cast<std::size_t>(i)) - m;
        a(i) *= std::exp(-dz * dz / (4.0 * sigma * sigma));
    }
    const double norm2 = a.squaredNorm();
    if (!(norm2 >= 1e-300)) {
        throw DegenerateOutcomeError("outcome m = " + std::to_string(m) +
                                     " leaves a vanishing post-measurement branch");
    }
    a /= std::sqrt(norm2);
    return DickeState(state.spin(), std::move(a));
}

/// exp(i p Jy) exp(i (k/J) m Jz): rotation about z conditioned on m,
/// followed by the fixed kick about y.
struct FeedbackRotation {
    double z_angle = 0.0;
    double y_angle = 0.0;

    DickeState operator()(const DickeState& state) const {
        return rotate(rotate(state, Axis::z, z_angle), Axis::y, y_angle);
    }
    /// Action on the Bloch vector.
    Mat3 bloch() const { return bloch_rotation(Axis::y, y_angle) * bloch_rotation(Axis::z, z_angle); }
};

inline FeedbackRotation feedback_unitary(double m, const ProtocolParams& params) {
    if (!std::isfinite(m)) throw ParameterError("feedback outcome must be finite");
    return {params.k / params.j() * m, params.p};
}

struct TrajectoryStep {
    DickeState state;
    MeasurementOutcome outcome;
};

/// Measurement with a prescribed outcome followed by feedback.
inline DickeState conditioned_step(const DickeState& state, double m, const ProtocolParams& params) {
    return feedback_unitary(m, params)(apply_kraus(state, m, params.sigma));
}

/// One protocol step: sample m, Kraus update, feedback.
inline TrajectoryStep trajectory_step(const DickeState& state, const ProtocolParams& params,
                                      CounterRng& rng) {
    const MeasurementOutcome outcome = sample_outcome(state, params.sigma, rng);
    return {conditioned_step(state, outcome.m, params), outcome};
}

/// exp(i p Jy) exp(i k/(2J) Jz^2) applied to a pure state.
inline DickeState qkt_floquet_apply(const DickeState& state, double k, double p) {
    Eigen::VectorXcd a = state.amplitudes();
    const double j = state.j();
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double m = state.m_of(static_cast<std::size_t>(i));
        a(i) *= std::polar(1.0, k / (2.0 * j) * m * m);
    }
    return rotate(DickeState(state.spin(), std::move(a)), Axis::y, p);
}

inline Eigen::MatrixXcd qkt_floquet_matrix(Spin spin, double k, double p) {
    const double j = spin.value();
    Eigen::MatrixXcd u = rotation_matrix(spin, Axis::y, p);
    for (Eigen::Index c = 0; c < u.cols(); ++c) {
        const double m = spin.m_of(static_cast<std::size_t>(c));
        u.col(c) *= std::polar(1.0, k / (2.0 * j) * m * m);
    }
    return u;
}

inline void require_dense_range(Spin spin) {
    if (spin.value() > kMaxDensityMatrixJ) {
        throw ParameterError("density-matrix maps are limited to J <= " +
                             std::to_string(static_cast<int>(kMaxDensityMatrixJ)));
    }
}

inline DensityMatrix qkt_floquet_apply(const DensityMatrix& rho, double k, double p) {
    require_dense_range(rho.spin());
    const Eigen::MatrixXcd u = qkt_floquet_matrix(rho.spin(), k, p);
    return DensityMatrix(rho.spin(), u * rho.matrix() * u.adjoint());
}

/// Dephasing rate of the outcome-averaged map:
/// feedback randomness k^2 sigma^2 / (2 J^2) plus back-action 1 / (8 sigma^2).
inline double gamma_rate(double k, double sigma, double j) {
    if (!(sigma > 0.0) || !(j > 0.0)) throw ParameterError("gamma_rate needs sigma > 0 and J > 0");
    return k * k * sigma * sigma / (2.0 * j * j) + 1.0 / (8.0 * sigma * sigma);
}

/// exp(Gamma L_D) with L_D = -[Jz, [Jz, .]]: rho_{mm'} *= exp(-Gamma (m - m')^2).
inline DensityMatrix dephase(const DensityMatrix& rho, double gamma) {
    if (!(gamma >= 0.0)) throw ParameterError("dephasing rate must be >= 0");
    Eigen::MatrixXcd out = rho.matrix();
    const Spin spin = rho.spin();
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        for (Eigen::Index c = 0; c < out.cols(); ++c) {
            const double dm = spin.m_of(static_cast<std::size_t>(r)) - spin.m_of(static_cast<std::size_t>(c));
            out(r, c) *= std::exp(-gamma * dm * dm);
        }
    }
    return DensityMatrix(spin, std::move(out));
}

/// Outcome-averaged protocol step: U_QKT (exp(Gamma L_D) rho) U_QKT^dagger.
inline DensityMatrix averaged_step(const DensityMatrix& rho, const ProtocolParams& params) {
    require_dense_range(rho.spin());
    const double gamma = gamma_rate(params.k, params.sigma, rho.j());
    return qkt_floquet_apply(dephase(rho, gamma), params.k, params.p);
}

}  // namespace kicktop
