#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "kicktop/analysis/engines.hpp"
#include "kicktop/classical_kt.hpp"
#include "kicktop/hp_gaussian.hpp"
#include "kicktop/meas_feedback.hpp"
#include "kicktop/rng.hpp"

using namespace kicktop;

namespace {

ProtocolParams make_params(double k, double sigma_over_sqrt_j, long n_atoms, long n_steps = 30) {
    ProtocolParams prm;
    prm.k = k;
    prm.p = 0.5 * kPi;
    prm.n_atoms = n_atoms;
    prm.sigma = sigma_over_sqrt_j * std::sqrt(0.5 * static_cast<double>(n_atoms));
    prm.n_steps = n_steps;
    return prm;
}

// Conditioning of a Gaussian vector J with covariance J V on y = Jz + noise,
// followed by the measurement back-action along e_z x n.
struct Conditioned {
    Vec3 n;
    Mat3 V;
};

Conditioned kalman_oracle(const GaussianSpinState& g, double sigma, double m) {
    const double s2 = sigma * sigma;
    const Vec3 ve = g.V.col(2);
    const double denom = s2 + g.j * g.V(2, 2);
    Conditioned out;
    out.n = g.n + ve * ((m - g.j * g.n.z()) / denom);
    const Vec3 u = Vec3::UnitZ().cross(g.n);
    out.V = g.V - (g.j / denom) * ve * ve.transpose() + (g.j / (4.0 * s2)) * u * u.transpose();
    return out;
}

Vec3 random_unit(CounterRng& rng) {
    return Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
}

Eigen::Vector3d sorted_eigenvalues(const Mat3& m) {
    return Eigen::SelfAdjointEigenSolver<Mat3>(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly).eigenvalues();
}

}  // namespace

TEST(GaussianState, CoherentStateHasTransverseHalfVariances) {
    const auto g = GaussianSpinState::coherent(0.7, -1.1, 40.0);
    EXPECT_NEAR(g.n.norm(), 1.0, 1e-15);
    EXPECT_LT((g.V * g.n).norm(), 1e-15);
    const Eigen::Vector3d ev = sorted_eigenvalues(g.V);
    EXPECT_NEAR(ev(0), 0.0, 1e-15);
    EXPECT_NEAR(ev(1), 0.5, 1e-15);
    EXPECT_NEAR(ev(2), 0.5, 1e-15);
    const Mat3 a = comoving_frame(g.n);
    const Mat3 local = a.transpose() * g.V * a;
    EXPECT_NEAR(local(0, 0), 0.5, 1e-14);
    EXPECT_NEAR(local(1, 1), 0.5, 1e-14);
    EXPECT_NEAR(local(2, 2), 0.0, 1e-14);
    EXPECT_NO_THROW(g.validate());
    EXPECT_NEAR(g.dJz2(), 40.0 * 0.5 * std::pow(std::sin(0.7), 2), 1e-12);
    EXPECT_THROW(GaussianSpinState::coherent(0.1, 0.1, 0.0), ParameterError);
}

TEST(GaussianState, ValidationFlagsBrokenStates) {
    auto g = GaussianSpinState::coherent(0.3, 0.2, 10.0);
    g.V(0, 1) += 1e-9;
    EXPECT_THROW(g.validate(), ParameterError);
    g = GaussianSpinState::coherent(0.3, 0.2, 10.0);
    g.V = -Mat3::Identity();
    EXPECT_THROW(g.validate(), ParameterError);
    g = GaussianSpinState::coherent(0.3, 0.2, 10.0);
    g.n *= 1.01;
    EXPECT_THROW(g.validate(), ParameterError);
}

TEST(ComovingFrame, NorthPoleIsIdentity) {
    EXPECT_LT((comoving_frame(Vec3::UnitZ()) - Mat3::Identity()).norm(), 1e-15);
}

TEST(ComovingFrame, OrthonormalRightHandedAndAligned) {
    CounterRng rng(2, 0, 0);
    for (int i = 0; i < 200; ++i) {
        const Vec3 n = random_unit(rng) * (0.1 + rng.uniform());
        const Mat3 a = comoving_frame(n);
        EXPECT_LT((a.transpose() * a - Mat3::Identity()).norm(), 1e-12);
        EXPECT_NEAR(a.determinant(), 1.0, 1e-12);
        EXPECT_LT((a.col(2) - n.normalized()).norm(), 1e-12);
        EXPECT_NEAR(a.col(0).z(), 0.0, 1e-12);  // e_n1 lies along e_z x n
    }
    const Mat3 south = comoving_frame(-Vec3::UnitZ());
    EXPECT_LT((south.col(0) - Vec3::UnitX()).norm(), 1e-15);
    EXPECT_NEAR(south.determinant(), 1.0, 1e-15);
}

TEST(ComovingFrame, ZeroVectorThrows) {
    EXPECT_THROW(comoving_frame(Vec3::Zero()), FrameDegeneracyError);
}

TEST(NoiseVariances, CoherentStateValues) {
    const double j = 1e4;
    const auto [s1, s2] = noise_variances(2.0, std::sqrt(j), j, 0.5 * j);
    EXPECT_NEAR(s1, 1.5 / j, 1e-18);
    EXPECT_NEAR(s2, 1.5 * 4.0 / j, 1e-15);
}

TEST(NoiseVariances, ScaleAndStructure) {
    double prev1 = 1e9, prev2 = 1e9;
    for (double j : {1e2, 1e4, 1e6}) {
        const auto [s1, s2] = noise_variances(1.5, std::sqrt(j), j, 0.5 * j);
        EXPECT_LT(s1, prev1);
        EXPECT_LT(s2, prev2);
        EXPECT_NEAR(s1 * j, 1.5, 1e-12);
        prev1 = s1;
        prev2 = s2;
    }
    const auto [a1, a2] = noise_variances(1.0, 3.0, 50.0, 7.0);
    const auto [b1, b2] = noise_variances(4.0, 3.0, 50.0, 7.0);
    EXPECT_DOUBLE_EQ(a1, b1);
    EXPECT_NEAR(a2, b2 / 16.0, 1e-16);
    EXPECT_THROW(noise_variances(1.0, 0.0, 1.0, 0.0), ParameterError);
    EXPECT_THROW(noise_variances(1.0, 1.0, 0.0, 0.0), ParameterError);
    EXPECT_THROW(noise_variances(1.0, 1.0, 1.0, -1.0), ParameterError);
}

TEST(HpCondition, MatchesKalmanOracleWithoutInnovation) {
    CounterRng rng(3, 0, 0);
    for (int i = 0; i < 50; ++i) {
        const double j = 10.0 + 1000.0 * rng.uniform();
        const auto g = GaussianSpinState::coherent(random_unit(rng), j);
        const double sigma = (0.2 + 2.0 * rng.uniform()) * std::sqrt(j);
        const auto got = hp_condition(g, sigma, j * g.n.z());
        const Conditioned want = kalman_oracle(g, sigma, j * g.n.z());
        EXPECT_LT((got.state.n - want.n).norm(), 1e-13);
        EXPECT_LT((got.state.V - want.V).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(HpCondition, MatchesKalmanOracleWithInnovation) {
    CounterRng rng(4, 0, 0);
    for (int i = 0; i < 50; ++i) {
        const double j = 1e4;
        const auto g = GaussianSpinState::coherent(random_unit(rng), j);
        const double sigma = std::sqrt(j);
        const double m = j * g.n.z() + 2.0 * sigma * rng.normal();
        const auto got = hp_condition(g, sigma, m);
        const Conditioned want = kalman_oracle(g, sigma, m);
        // A shift within the tangent plane lengthens n; the step clamps it.
        EXPECT_LT((got.state.n - want.n / std::max(1.0, want.n.norm())).norm(), 1e-12);
        // The covariance is carried rigidly to the new plane.
        EXPECT_LT((sorted_eigenvalues(got.state.V) - sorted_eigenvalues(want.V)).norm(), 1e-12);
        EXPECT_LT((got.state.V * got.state.n).norm(), 1e-12);
    }
}

TEST(HpCondition, ConditionedVarianceExample) {
    const double j = 1e6;
    const auto g = GaussianSpinState::coherent(0.5 * kPi, 0.0, j);
    const auto out = hp_condition(g, std::sqrt(j), 0.0);
    EXPECT_NEAR(out.state.V(2, 2), 1.0 / 3.0, 1e-12);
}

TEST(HpCondition, ZeroGainLimitLeavesStateUnchanged) {
    const double j = 500.0;
    const auto g = GaussianSpinState::coherent(1.0, 0.4, j);
    const auto out = hp_condition(g, 1e9 * std::sqrt(j), j * g.n.z() + 3e9 * std::sqrt(j));
    EXPECT_LT((out.state.n - g.n).norm(), 1e-9);
    EXPECT_LT((out.state.V - g.V).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(HpCondition, RepeatedMeasurementsSqueezeMonotonically) {
    const double j = 1e3;
    auto g = GaussianSpinState::coherent(1.2, 0.3, j);
    double prev = g.V(2, 2);
    for (int i = 0; i < 20; ++i) {
        g = hp_condition(g, std::sqrt(j), j * g.n.z()).state;
        EXPECT_LT(g.V(2, 2), prev);
        EXPECT_GE(g.V(2, 2), 0.0);
        prev = g.V(2, 2);
    }
}

TEST(HpCondition, PureStatesStayMinimumUncertainty) {
    CounterRng rng(5, 0, 0);
    for (int i = 0; i < 40; ++i) {
        const double j = 1e4;
        const auto g = GaussianSpinState::coherent(random_unit(rng), j);
        const double sigma = (0.1 + 3.0 * rng.uniform()) * std::sqrt(j);
        const auto out = hp_condition(g, sigma, j * g.n.z() + sigma * rng.normal());
        const Mat3 a = comoving_frame(out.state.n);
        const Eigen::Matrix2d plane = (a.transpose() * out.state.V * a).topLeftCorner<2, 2>();
        EXPECT_NEAR(plane.determinant(), 0.25, 1e-10);
    }
}

TEST(HpCondition, MeanMapInTangentComponents) {
    // For p = pi/2 the step reads X' = -Z - eta1 V22' (1 - Z^2), with V22'
    // the conditioned variance of the second tangent quadrature.
    CounterRng rng(6, 0, 0);
    for (int i = 0; i < 30; ++i) {
        const double j = 2e3;
        const auto g = GaussianSpinState::coherent(random_unit(rng), j);
        const ProtocolParams prm = make_params(1.5, 0.9, 4000, 1);
        const double m = j * g.n.z() + prm.sigma * rng.normal();
        const auto cond = hp_condition(g, prm.sigma, m, prm.k);
        const auto step = hp_step_with_outcome(g, prm, m);
        const Mat3 a = comoving_frame(g.n);
        const Conditioned oracle = kalman_oracle(g, prm.sigma, m);
        const double v22 = (a.transpose() * oracle.V * a)(1, 1);
        const double z = g.n.z();
        // Linear in eta1; the conditioned mean is clamped back to |n| <= 1,
        // which is second order in the shift.
        const double shift = (oracle.n - g.n).norm();
        EXPECT_NEAR(step.state.n.x(), -z - cond.noise.eta1 * v22 * (1.0 - z * z), shift * shift + 1e-13);
        EXPECT_NEAR(cond.noise.eta1, (m - j * z) / (prm.sigma * prm.sigma), 1e-15);
        EXPECT_NEAR(cond.noise.eta2, prm.k * (m - j * z) / j, 1e-15);
    }
}

TEST(HpStep, NoiseFreeOutcomesReproduceClassicalMap) {
    const ProtocolParams prm = make_params(1.5, 0.9, 2000, 1);
    const Vec3 ic = bloch_from_angles(0.6, 0.9);
    auto g = GaussianSpinState::coherent(ic, prm.j());
    Vec3 c = ic;
    double worst = 0.0;
    for (int s = 0; s < 1000; ++s) {
        g = hp_step_with_outcome(g, prm, g.j * g.n.z()).state;
        c = ckt_step(c, prm.k, prm.p);
        worst = std::max(worst, (g.n - c).norm());
    }
    EXPECT_LT(worst, 1e-12);
}

TEST(HpStep, NoiseFreeEquatorOrbitHasPeriodFour) {
    for (double k : {0.0, 1.5, 7.0}) {
        const ProtocolParams prm = make_params(k, 1.0, 1000, 1);
        auto g = GaussianSpinState::coherent(Vec3::UnitX(), prm.j());
        const std::vector<Vec3> expected{Vec3::UnitZ(), -Vec3::UnitX(), -Vec3::UnitZ(), Vec3::UnitX()};
        for (const Vec3& e : expected) {
            g = hp_step_with_outcome(g, prm, g.j * g.n.z()).state;
            EXPECT_LT((g.n - e).norm(), 1e-12);
        }
    }
}

TEST(HpStep, OutcomeStatistics) {
    const double j = 1e4;
    const ProtocolParams prm = make_params(1.5, 0.9, 20000, 1);
    const auto g = GaussianSpinState::coherent(1.0, 0.5, j);
    const int n = 20000;
    double mean = 0.0, sq = 0.0, eta_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        CounterRng rng(7, static_cast<std::uint32_t>(i), 0);
        const auto out = hp_step(g, prm, rng);
        const double d = out.m - j * g.n.z();
        mean += d;
        sq += d * d;
        eta_sq += out.noise.eta1 * out.noise.eta1;
        if (i == 0) {
            EXPECT_NEAR(out.noise.sigma1_sq, (prm.sigma * prm.sigma + g.dJz2()) / std::pow(prm.sigma, 4), 1e-18);
        }
    }
    const double var = prm.sigma * prm.sigma + g.dJz2();
    EXPECT_NEAR(mean / n, 0.0, 4.0 * std::sqrt(var / n));
    EXPECT_NEAR(sq / n / var, 1.0, 0.04);
    const auto [s1, s2] = noise_variances(prm.k, prm.sigma, j, g.dJz2());
    EXPECT_NEAR(eta_sq / n / s1, 1.0, 0.04);
    EXPECT_GT(s2, 0.0);
}

TEST(HpStep, StressStaysPhysical) {
    const ProtocolParams prm = make_params(3.0, 0.9, 10000, 1);
    auto g = GaussianSpinState::coherent(0.9, 0.2, prm.j());
    for (int s = 1; s <= 10000; ++s) {
        CounterRng rng(8, 0, static_cast<std::uint32_t>(s));
        g = hp_step(g, prm, rng).state;
        ASSERT_LE(g.n.norm(), 1.0 + 1e-9) << "step " << s;
        ASSERT_NO_THROW(g.validate()) << "step " << s;
    }
}

TEST(HpStep, TracksQuantumTrajectoryWithSharedOutcomes) {
    const ProtocolParams prm = make_params(1.5, 0.9, 1000, 30);
    const Vec3 ic = bloch_from_angles(1.1, 0.4);
    DickeState psi = make_scs(1.1, 0.4, prm.spin());
    std::vector<double> outcomes, quantum_z;
    for (long s = 1; s <= prm.n_steps; ++s) {
        CounterRng rng(9, 0, static_cast<std::uint32_t>(s));
        TrajectoryStep step = trajectory_step(psi, prm, rng);
        psi = std::move(step.state);
        outcomes.push_back(step.outcome.m);
        quantum_z.push_back(expectations(psi).n.z());
    }
    const TrajectoryRecord hp = hp_trajectory_from_outcomes(prm, ic, outcomes);
    double worst = 0.0;
    for (std::size_t i = 0; i < outcomes.size(); ++i) worst = std::max(worst, std::abs(hp.rows[i].n.z() - quantum_z[i]));
    EXPECT_LT(worst, 0.05);
}

TEST(HpEnsemble, ClassicalDistanceShrinksWithN) {
    const auto ics = fibonacci_sphere(100);
    double prev = 1e9;
    for (long n_atoms : {1000L, 10000L, 100000L, 1000000L, 10000000L}) {
        const ProtocolParams prm = make_params(1.5, 0.9, n_atoms, 30);
        double total = 0.0;
        for (std::size_t i = 0; i < ics.size(); ++i) {
            const auto rec = simulate_trajectory(EngineKind::hp, prm, ics[i], {10, i});
            total += max_classical_distance(rec, ckt_path(ics[i], prm.k, prm.p, prm.n_steps));
        }
        const double mean = total / static_cast<double>(ics.size());
        EXPECT_LT(mean, prev) << "N = " << n_atoms;
        prev = mean;
    }
}
