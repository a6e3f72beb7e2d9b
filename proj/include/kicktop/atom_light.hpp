#pragma once

// Atom-light interface model of the QND measurement: the continuous
// photocurrent record, the stochastic master equation for the collective
// spin, optical-pumping decoherence, and the OD / cooperativity
// parameterization.
//
// Optical pumping is modeled, not derived from the multilevel atom:
//   * density-matrix level: depolarization within the symmetric subspace,
//     D[rho] = I/(2J+1) - rho, which contracts <J> at rate gamma_s;
//   * Gaussian level: n -> n exp(-gamma_s t), and the covariance transverse
//     to n relaxes toward the coherent value 1/2 at rate gamma_s.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "kicktop/errors.hpp"
#include "kicktop/hp_gaussian.hpp"
#include "kicktop/meas_feedback.hpp"
#include "kicktop/rng.hpp"
#include "kicktop/spin_core.hpp"

namespace kicktop {

/// Default resonant-cross-section to beam-area ratio: N = 1e6 gives OD = 300.
inline constexpr double kDefaultSigma0OverA = 3e-4;

struct AtomLightParams {
    long n_atoms = 1000000;
    double sigma0_over_A = kDefaultSigma0OverA;
    double gamma_s = 1.0;  ///< photon scattering rate into 4 pi
    double T = 1.0;        ///< measurement window
    double dt = 0.05;      ///< integrator step

    double j() const { return 0.5 * static_cast<double>(n_atoms); }
    double kappa() const { return sigma0_over_A * gamma_s; }
    double od() const { return static_cast<double>(n_atoms) * sigma0_over_A; }
    /// Measurement resolution variance 1/(kappa T).
    double sigma_sq() const { return 1.0 / (kappa() * T); }
    double gamma_s_T() const { return gamma_s * T; }
    long n_substeps() const { return std::max(1L, std::lround(T / dt)); }

    void validate() const {
        if (n_atoms < 1) throw ParameterError("N must be >= 1");
        if (!(sigma0_over_A > 0.0) || !(gamma_s > 0.0) || !(T > 0.0) || !(dt > 0.0)) {
            throw ParameterError("atom-light rates and durations must be > 0");
        }
        if (dt > T / 20.0 * (1.0 + 1e-12)) throw ParameterError("dt must be <= T/20");
    }
};

/// Chooses the window T so that 1/(kappa T) equals `sigma_sq_target`
/// (the coherent-state projection noise J/2 when not given), and dt = T /
/// `substeps`. Then gamma_s T = 1 / (sigma_sq_target * sigma0/A), which is
/// proportional to 1/OD at fixed sigma_sq_target / N.
inline AtomLightParams od_params(long n_atoms, double sigma0_over_A, double gamma_s = 1.0,
                                 double sigma_sq_target = -1.0, long substeps = 40) {
    if (n_atoms < 1) throw ParameterError("N must be >= 1");
    if (substeps < 20) throw ParameterError("need at least 20 integrator substeps per window");
    AtomLightParams p;
    p.n_atoms = n_atoms;
    p.sigma0_over_A = sigma0_over_A;
    p.gamma_s = gamma_s;
    const double target = sigma_sq_target > 0.0 ? sigma_sq_target : 0.5 * p.j();
    p.T = 1.0 / (p.kappa() * target);
    p.dt = p.T / static_cast<double>(substeps);
    p.validate();
    return p;
}

/// Rates entering the stochastic master equation.
struct SmeRates {
    double kappa = 0.0;
    double gamma_s = 0.0;
};

struct RecordSample {
    double t = 0.0;
    double M_dt = 0.0;  ///< record increment <Jz> dt + dW / sqrt(kappa)
};

/// Record source whose <Jz> never changes.
struct FrozenRecordSource {
    double mean = 0.0;
    double mean_jz() const { return mean; }
    void advance(double, double) {}
};

/// Time-averaged record m = (1/T) int M(t) dt by Euler-Maruyama. `source`
/// supplies Tr(rho Jz) and is advanced with the same Wiener increment.
template <class Source>
double continuous_record(Source& source, const AtomLightParams& params, CounterRng& rng,
                         std::vector<RecordSample>* samples = nullptr) {
    const long steps = params.n_substeps();
    const double dt = params.T / static_cast<double>(steps);
    const double inv_sqrt_kappa = 1.0 / std::sqrt(params.kappa());
    const double sqrt_dt = std::sqrt(dt);
    double integral = 0.0;
    for (long s = 0; s < steps; ++s) {
        const double dW = sqrt_dt * rng.normal();
        const double increment = source.mean_jz() * dt + inv_sqrt_kappa * dW;
        integral += increment;
        if (samples) samples->push_back({static_cast<double>(s) * dt, increment});
        source.advance(dW, dt);
    }
    return integral / params.T;
}

/// Positivity check is skipped above this dimension (cost grows as D^3).
inline constexpr std::size_t kSmePositivityCheckMaxDim = 101;

/// One SME step driven by the Wiener increment dW, in the Kraus form
///   rho -> M rho M^dagger / Tr,  M = 1 - c^2 dt/2 + c dy + c^2 (dy^2 - dt)/2,
/// with c = sqrt(kappa)/2 Jz and dy = sqrt(kappa) <Jz> dt + dW, followed by
/// depolarization at rate gamma_s. To first order this is the
/// Euler-Maruyama step of
///   d rho = sqrt(kappa)/2 H[rho] dW + kappa/8 L_D[rho] dt + gamma_s D[rho] dt.
inline DensityMatrix sme_step(const DensityMatrix& rho, const SmeRates& rates, double dt, double dW) {
    if (!(dt > 0.0) || rates.kappa < 0.0 || rates.gamma_s < 0.0) {
        throw ParameterError("sme_step needs dt > 0 and non-negative rates");
    }
    if (rates.gamma_s * dt > 1.0) throw IntegratorStepError("gamma_s * dt > 1; shrink dt");
    const Spin spin = rho.spin();
    const auto d = static_cast<Eigen::Index>(spin.dim());
    const double sk = std::sqrt(rates.kappa);
    const double dy = sk * rho.mean_jz() * dt + dW;
    Eigen::VectorXd diag(d);
    for (Eigen::Index i = 0; i < d; ++i) {
        const double c = 0.5 * sk * spin.m_of(static_cast<std::size_t>(i));
        diag(i) = 1.0 - 0.5 * c * c * dt + c * dy + 0.5 * c * c * (dy * dy - dt);
    }
    Eigen::MatrixXcd out = diag.asDiagonal() * rho.matrix() * diag.asDiagonal();
    const double tr = out.trace().real();
    if (!(tr > 0.0)) throw IntegratorStepError("SME step produced non-positive trace; shrink dt");
    out /= tr;
    if (rates.gamma_s > 0.0) {
        const double mix = rates.gamma_s * dt;
        out *= (1.0 - mix);
        out.diagonal().array() += mix / static_cast<double>(d);
    }
    out = 0.5 * (out + out.adjoint()).eval();
    out /= out.trace().real();
    DensityMatrix next(spin, std::move(out));
    if (spin.dim() <= kSmePositivityCheckMaxDim && next.min_eigenvalue() < -1e-8) {
        throw IntegratorStepError("SME step left the positive cone; shrink dt");
    }
    return next;
}

inline DensityMatrix sme_step(const DensityMatrix& rho, const SmeRates& rates, double dt, CounterRng& rng) {
    return sme_step(rho, rates, dt, std::sqrt(dt) * rng.normal());
}

/// Record source that evolves a density matrix under the SME.
struct SmeRecordSource {
    DensityMatrix rho;
    SmeRates rates;
    double mean_jz() const { return rho.mean_jz(); }
    void advance(double dW, double dt) { rho = sme_step(rho, rates, dt, dW); }
};

/// Optical-pumping relaxation of a Gaussian state over duration dt.
inline GaussianSpinState gaussian_decohere(const GaussianSpinState& g, double gamma_s, double dt) {
    if (gamma_s < 0.0 || dt < 0.0) throw ParameterError("gamma_s and dt must be >= 0");
    if (gamma_s == 0.0 || dt == 0.0) return g;
    const double decay = std::exp(-gamma_s * dt);
    GaussianSpinState out = g;
    out.n = g.n * decay;
    if (g.n.norm() > 1e-12) {
        const Mat3 a = comoving_frame(g.n);
        Mat3 local = a.transpose() * g.V * a;
        Eigen::Matrix2d block = local.topLeftCorner<2, 2>();
        block = 0.5 * Eigen::Matrix2d::Identity() + (block - 0.5 * Eigen::Matrix2d::Identity()) * decay;
        local.topLeftCorner<2, 2>() = block;
        local.block<2, 1>(0, 2) *= decay;
        local.block<1, 2>(2, 0) *= decay;
        out.V = detail::symmetrize(a * local * a.transpose());
    } else {
        out.V = detail::symmetrize(0.5 * Mat3::Identity() + (g.V - 0.5 * Mat3::Identity()) * decay);
    }
    return out;
}

/// One protocol step of the Gaussian model with optical pumping during the
/// measurement window: relax for T/2, measure, relax for T/2, feed back.
/// `gamma_s_T` is the dimensionless pumping per window.
inline HpMeasurement hp_step_decoherent(const GaussianSpinState& g, const ProtocolParams& params,
                                        double gamma_s_T, CounterRng& rng) {
    const GaussianSpinState before = gaussian_decohere(g, gamma_s_T, 0.5);
    const double spread = std::sqrt(params.sigma * params.sigma + before.dJz2());
    const double m = before.j * before.n.z() + spread * rng.normal();
    HpMeasurement out = hp_condition(before, params.sigma, m, params.k);
    out.state = gaussian_decohere(out.state, gamma_s_T, 0.5);
    out.state = apply_feedback(out.state, hp_feedback(m, params.k, params.p, before.j));
    return out;
}

}  // namespace kicktop
