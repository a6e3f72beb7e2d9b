#pragma once

// Collective spin states in the Dicke basis |J, m>, collective operators,
// spin coherent states and SU(2) rotations.
//
// Amplitude index i corresponds to m = J - i (row 0 is m = +J).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "kicktop/errors.hpp"

namespace kicktop {

using cplx = std::complex<double>;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = 3.14159265358979323846;

/// Total spin quantum number J, stored as the integer 2J.
class Spin {
public:
    static Spin from_value(double j) {
        if (!std::isfinite(j) || j < 0.5) {
            throw ParameterError("spin J must be a positive half-integer, got " + std::to_string(j));
        }
        const double twice = 2.0 * j;
        const double rounded = std::round(twice);
        if (std::abs(twice - rounded) > 1e-9 || rounded > 2.0e9) {
            throw ParameterError("spin J must be a positive half-integer, got " + std::to_string(j));
        }
        return Spin(static_cast<long>(rounded));
    }
    /// J = N/2 for N two-level atoms.
    static Spin from_atoms(long n_atoms) {
        if (n_atoms < 1) throw ParameterError("ensemble size N must be >= 1");
        return Spin(n_atoms);
    }

    double value() const { return 0.5 * static_cast<double>(twice_); }
    long twice() const { return twice_; }
    std::size_t dim() const { return static_cast<std::size_t>(twice_ + 1); }
    /// Magnetic quantum number of amplitude index i.
    double m_of(std::size_t i) const { return value() - static_cast<double>(i); }

    friend bool operator==(Spin a, Spin b) { return a.twice_ == b.twice_; }

private:
    explicit Spin(long twice) : twice_(twice) {}
    long twice_;
};

/// Pure collective-spin state: complex amplitudes over |J, m>, m = J..-J.
class DickeState {
public:
    DickeState(Spin spin, Eigen::VectorXcd amplitudes) : spin_(spin), amp_(std::move(amplitudes)) {
        if (static_cast<std::size_t>(amp_.size()) != spin_.dim()) {
            throw ParameterError("amplitude vector length must equal 2J+1");
        }
    }

    /// Dicke basis state |J, m>.
    static DickeState basis(Spin spin, double m) {
        const double idx = spin.value() - m;
        if (std::abs(idx - std::round(idx)) > 1e-9 || idx < -1e-9 ||
            idx > static_cast<double>(spin.twice()) + 1e-9) {
            throw ParameterError("m is not in the spectrum of Jz");
        }
        Eigen::VectorXcd a = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(spin.dim()));
        a(static_cast<Eigen::Index>(std::lround(idx))) = 1.0;
        return DickeState(spin, std::move(a));
    }

    Spin spin() const { return spin_; }
    double j() const { return spin_.value(); }
    std::size_t dim() const { return spin_.dim(); }
    double m_of(std::size_t i) const { return spin_.m_of(i); }

    const Eigen::VectorXcd& amplitudes() const { return amp_; }
    Eigen::VectorXcd& amplitudes() { return amp_; }

    double norm2() const { return amp_.squaredNorm(); }
    void normalize() { amp_ /= std::sqrt(norm2()); }

private:
    Spin spin_;
    Eigen::VectorXcd amp_;
};

enum class Axis { x, y, z, plus, minus };

inline Axis parse_axis(std::string_view label) {
    if (label == "x") return Axis::x;
    if (label == "y") return Axis::y;
    if (label == "z") return Axis::z;
    if (label == "+" || label == "plus") return Axis::plus;
    if (label == "-" || label == "minus") return Axis::minus;
    throw ParameterError("invalid spin axis label '" + std::string(label) + "'");
}

namespace detail {

/// <m'+1| J+ |m'> for m' = J-i-1, i = 0..2J-1: the super-diagonal of J+.
inline Eigen::VectorXd ladder_elements(Spin spin) {
    const double j = spin.value();
    const auto n = static_cast<Eigen::Index>(spin.dim()) - 1;
    Eigen::VectorXd out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double m = j - static_cast<double>(i) - 1.0;
        out(i) = std::sqrt(j * (j + 1.0) - m * (m + 1.0));
    }
    return out;
}

}  // namespace detail

/// Tridiagonal collective operator. `upper(i)` is the element at
/// (row i, col i+1), `lower(i)` the element at (row i+1, col i).
class SpinOperator {
public:
    SpinOperator(Axis axis, Spin spin) : axis_(axis), spin_(spin) {
        const auto d = static_cast<Eigen::Index>(spin.dim());
        diag_ = Eigen::VectorXd::Zero(d);
        upper_ = Eigen::VectorXcd::Zero(d - 1);
        lower_ = Eigen::VectorXcd::Zero(d - 1);
        const Eigen::VectorXd ladder = detail::ladder_elements(spin);
        const cplx i_unit(0.0, 1.0);
        switch (axis) {
            case Axis::z:
                for (Eigen::Index i = 0; i < d; ++i) diag_(i) = spin.m_of(static_cast<std::size_t>(i));
                break;
            case Axis::plus:
                upper_ = ladder.cast<cplx>();
                break;
            case Axis::minus:
                lower_ = ladder.cast<cplx>();
                break;
            case Axis::x:
                upper_ = (0.5 * ladder).cast<cplx>();
                lower_ = upper_;
                break;
            case Axis::y:
                upper_ = -0.5 * i_unit * ladder.cast<cplx>();
                lower_ = 0.5 * i_unit * ladder.cast<cplx>();
                break;
        }
    }

    Axis axis() const { return axis_; }
    Spin spin() const { return spin_; }
    const Eigen::VectorXd& diagonal() const { return diag_; }
    const Eigen::VectorXcd& upper() const { return upper_; }
    const Eigen::VectorXcd& lower() const { return lower_; }

    Eigen::VectorXcd apply(const Eigen::VectorXcd& v) const {
        const Eigen::Index d = diag_.size();
        Eigen::VectorXcd out = diag_.cast<cplx>().cwiseProduct(v);
        if (d > 1) {
            out.head(d - 1) += upper_.cwiseProduct(v.tail(d - 1));
            out.tail(d - 1) += lower_.cwiseProduct(v.head(d - 1));
        }
        return out;
    }

    Eigen::MatrixXcd to_dense() const {
        const Eigen::Index d = diag_.size();
        Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(d, d);
        m.diagonal() = diag_.cast<cplx>();
        if (d > 1) {
            m.diagonal(1) = upper_;
            m.diagonal(-1) = lower_;
        }
        return m;
    }

private:
    Axis axis_;
    Spin spin_;
    Eigen::VectorXd diag_;
    Eigen::VectorXcd upper_;
    Eigen::VectorXcd lower_;
};

inline SpinOperator collective_op(Axis axis, Spin spin) { return SpinOperator(axis, spin); }

/// 3x3 rotation applied to <J> by the unitary exp(i * angle * J_axis).
/// With the positive exponent this is an active rotation by -angle.
inline Mat3 bloch_rotation(Axis axis, double angle) {
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    Mat3 r;
    switch (axis) {
        case Axis::x:
            r << 1, 0, 0, 0, c, s, 0, -s, c;
            return r;
        case Axis::y:
            r << c, 0, -s, 0, 1, 0, s, 0, c;
            return r;
        case Axis::z:
            r << c, s, 0, -s, c, 0, 0, 0, 1;
            return r;
        default:
            throw ParameterError("rotation axis must be x, y or z");
    }
}

namespace detail {

/// Largest dimension for which the Jx eigenbasis is materialized and cached.
inline constexpr std::size_t kDenseRotationMaxDim = 401;

/// Real orthogonal eigenvectors of Jx; column c has eigenvalue c - J.
inline std::shared_ptr<const Eigen::MatrixXd> jx_eigenbasis(Spin spin) {
    static std::mutex mutex;
    static std::map<long, std::shared_ptr<const Eigen::MatrixXd>> cache;
    {
        std::lock_guard lock(mutex);
        if (auto it = cache.find(spin.twice()); it != cache.end()) return it->second;
    }
    const auto d = static_cast<Eigen::Index>(spin.dim());
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd sub = 0.5 * ladder_elements(spin);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
    solver.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
    Eigen::MatrixXd vecs = solver.eigenvectors();
    // Two Newton-Schulz steps toward the nearest orthogonal matrix, so that
    // long chains of rotations do not drift in norm.
    for (int it = 0; it < 2; ++it) {
        const Eigen::MatrixXd gram = vecs.transpose() * vecs;
        vecs = vecs * (1.5 * Eigen::MatrixXd::Identity(d, d) - 0.5 * gram);
    }
    auto basis = std::make_shared<const Eigen::MatrixXd>(std::move(vecs));
    std::lock_guard lock(mutex);
    return cache.emplace(spin.twice(), std::move(basis)).first->second;
}

/// J_n(x) for n = 0..n_max, x >= 0, by Miller's backward recurrence
/// normalized with J_0 + 2 sum_k J_2k = 1.
inline std::vector<double> bessel_j_sequence(int n_max, double x) {
    std::vector<double> out(static_cast<std::size_t>(n_max) + 1, 0.0);
    if (x == 0.0) {
        out[0] = 1.0;
        return out;
    }
    const int reach = std::max(n_max, static_cast<int>(x + 20.0 * std::cbrt(x)));
    int start = reach + 40 + static_cast<int>(std::sqrt(40.0 * std::max(reach, 1)));
    if (start % 2 == 1) ++start;
    double next = 0.0;  // J_{n+1}
    double cur = 1e-300;  // J_n
    double norm = 0.0;
    for (int n = start; n > 0; --n) {
        const double prev = 2.0 * n / x * cur - next;  // J_{n-1}
        next = cur;
        cur = prev;
        const int idx = n - 1;
        if (idx <= n_max) out[static_cast<std::size_t>(idx)] = cur;
        if (idx > 0 && idx % 2 == 0) norm += 2.0 * cur;
        if (std::abs(cur) > 1e250) {
            cur *= 1e-250;
            next *= 1e-250;
            norm *= 1e-250;
            for (auto& v : out) v *= 1e-250;
        }
    }
    norm += cur;
    for (auto& v : out) v /= norm;
    return out;
}

/// exp(i angle Jx) v via cached eigendecomposition.
inline Eigen::VectorXcd rotate_x_dense(Spin spin, const Eigen::VectorXcd& v, double angle) {
    const auto basis = jx_eigenbasis(spin);
    Eigen::VectorXcd coeffs = basis->transpose() * v;
    const double j = spin.value();
    for (Eigen::Index c = 0; c < coeffs.size(); ++c) {
        coeffs(c) *= std::polar(1.0, angle * (static_cast<double>(c) - j));
    }
    return (*basis) * coeffs;
}

/// exp(i angle Jx) v via a Chebyshev expansion in Jx / J.
inline Eigen::VectorXcd rotate_x_chebyshev(Spin spin, const Eigen::VectorXcd& v, double angle) {
    const double j = spin.value();
    const double a = angle * j;
    const double x = std::abs(a);
    const int n_max = static_cast<int>(std::ceil(x + 10.0 * std::cbrt(x) + 30.0));
    const std::vector<double> bessel = bessel_j_sequence(n_max, x);
    const Eigen::VectorXd off = 0.5 * ladder_elements(spin) / j;
    const Eigen::Index d = v.size();
    auto apply_scaled = [&](const Eigen::VectorXcd& in) {
        Eigen::VectorXcd out = Eigen::VectorXcd::Zero(d);
        if (d > 1) {
            out.head(d - 1) += off.cwiseProduct(in.tail(d - 1));
            out.tail(d - 1) += off.cwiseProduct(in.head(d - 1));
        }
        return out;
    };
    Eigen::VectorXcd t_prev = v;
    Eigen::VectorXcd t_cur = apply_scaled(v);
    Eigen::VectorXcd result = bessel[0] * v;
    cplx phase(0.0, 1.0);  // i^n
    const double sign = a < 0 ? -1.0 : 1.0;
    double sign_n = sign;  // sign^n, J_n(-x) = (-1)^n J_n(x)
    for (int n = 1; n <= n_max; ++n) {
        result += (2.0 * bessel[static_cast<std::size_t>(n)] * sign_n) * phase * t_cur;
        Eigen::VectorXcd t_next = 2.0 * apply_scaled(t_cur) - t_prev;
        t_prev = std::move(t_cur);
        t_cur = std::move(t_next);
        phase *= cplx(0.0, 1.0);
        sign_n *= sign;
    }
    return result;
}

/// The result is rescaled to the input norm: the matvecs round with a small
/// one-sided bias that otherwise accumulates over long rotation chains.
inline Eigen::VectorXcd rotate_x(Spin spin, const Eigen::VectorXcd& v, double angle) {
    Eigen::VectorXcd out =
        spin.dim() <= kDenseRotationMaxDim ? rotate_x_dense(spin, v, angle) : rotate_x_chebyshev(spin, v, angle);
    const double in_norm = v.norm(), out_norm = out.norm();
    if (out_norm > 0.0) out *= in_norm / out_norm;
    return out;
}

inline void apply_z_phase(Spin spin, Eigen::VectorXcd& v, double angle) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        v(i) *= std::polar(1.0, angle * spin.m_of(static_cast<std::size_t>(i)));
    }
}

}  // namespace detail

/// Applies exp(i * angle * J_axis) for axis x, y or z.
/// Uses Jy = P Jx P^dagger with P = exp(-i pi/2 Jz).
inline DickeState rotate(const DickeState& state, Axis axis, double angle) {
    if (!std::isfinite(angle)) throw ParameterError("rotation angle must be finite");
    const Spin spin = state.spin();
    Eigen::VectorXcd v = state.amplitudes();
    switch (axis) {
        case Axis::z:
            detail::apply_z_phase(spin, v, angle);
            break;
        case Axis::x:
            v = detail::rotate_x(spin, v, angle);
            break;
        case Axis::y:
            detail::apply_z_phase(spin, v, 0.5 * kPi);
            v = detail::rotate_x(spin, v, angle);
            detail::apply_z_phase(spin, v, -0.5 * kPi);
            break;
        default:
            throw ParameterError("rotation axis must be x, y or z");
    }
    return DickeState(spin, std::move(v));
}

/// Dense unitary exp(i * angle * J_axis); intended for density-matrix work
/// at small J.
inline Eigen::MatrixXcd rotation_matrix(Spin spin, Axis axis, double angle) {
    const auto d = static_cast<Eigen::Index>(spin.dim());
    Eigen::MatrixXcd u(d, d);
    for (Eigen::Index c = 0; c < d; ++c) {
        Eigen::VectorXcd e = Eigen::VectorXcd::Zero(d);
        e(c) = 1.0;
        u.col(c) = rotate(DickeState(spin, std::move(e)), axis, angle).amplitudes();
    }
    return u;
}

/// Spin coherent state exp(-i phi Jz) exp(-i theta Jy) |J, J>, pointing
/// along (sin theta cos phi, sin theta sin phi, cos theta).
inline DickeState make_scs(double theta, double phi, Spin spin) {
    if (!std::isfinite(theta) || !std::isfinite(phi)) {
        throw ParameterError("coherent-state angles must be finite");
    }
    // Fold theta into [0, pi] without changing the direction.
    const Vec3 dir(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta));
    const double th = std::acos(std::clamp(dir.z(), -1.0, 1.0));
    const double ph = std::hypot(dir.x(), dir.y()) > 1e-15 ? std::atan2(dir.y(), dir.x()) : phi;
    const double j = spin.value();
    const double log_c = std::log(std::cos(0.5 * th));
    const double log_s = std::log(std::sin(0.5 * th));
    const double log_norm = std::lgamma(2.0 * j + 1.0);
    const auto d = static_cast<Eigen::Index>(spin.dim());
    Eigen::VectorXcd a(d);
    for (Eigen::Index i = 0; i < d; ++i) {
        const double m = spin.m_of(static_cast<std::size_t>(i));
        const double up = j + m;
        const double down = j - m;
        double log_mag = 0.5 * (log_norm - std::lgamma(up + 1.0) - std::lgamma(down + 1.0));
        if (up > 0) log_mag += up * log_c;
        if (down > 0) log_mag += down * log_s;
        a(i) = std::polar(std::exp(log_mag), -m * ph);
    }
    DickeState out(spin, std::move(a));
    out.normalize();
    return out;
}

inline DickeState make_scs(double theta, double phi, double j) {
    return make_scs(theta, phi, Spin::from_value(j));
}

/// First and second moments of a pure state.
struct SpinMoments {
    Vec3 n;       ///< <J>/J
    Mat3 V;       ///< (<{Ja,Jb}> - 2<Ja><Jb>) / (2J)
    double dJz2;  ///< <Jz^2> - <Jz>^2
};

inline SpinMoments expectations(const DickeState& state) {
    const Spin spin = state.spin();
    const Eigen::VectorXcd& psi = state.amplitudes();
    const Eigen::VectorXcd applied[3] = {collective_op(Axis::x, spin).apply(psi),
                                         collective_op(Axis::y, spin).apply(psi),
                                         collective_op(Axis::z, spin).apply(psi)};
    Vec3 mean;
    for (int a = 0; a < 3; ++a) mean(a) = psi.dot(applied[a]).real();
    Mat3 second;
    for (int a = 0; a < 3; ++a) {
        for (int b = a; b < 3; ++b) {
            // <{Ja,Jb}> = 2 Re <Ja psi | Jb psi>
            second(a, b) = 2.0 * applied[a].dot(applied[b]).real();
            second(b, a) = second(a, b);
        }
    }
    const double j = spin.value();
    SpinMoments out;
    out.n = mean / j;
    out.V = (second - 2.0 * mean * mean.transpose()) / (2.0 * j);
    out.dJz2 = 0.5 * second(2, 2) - mean(2) * mean(2);
    return out;
}

}  // namespace kicktop
