#pragma once

#include <stdexcept>
#include <string>

namespace kicktop {

/// Invalid argument to a simulation routine (bad J, negative rate, ...).
class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Measurement outcome so far from the state's support that the
/// post-measurement branch has vanishing norm.
class DegenerateOutcomeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Co-moving frame requested for a (near) zero Bloch vector.
class FrameDegeneracyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Lyapunov shadows collapsed onto the fiducial trajectory, or a similar
/// loss of numerical resolution.
class NumericalDegeneracyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Stochastic integrator produced a state outside tolerance; shrink dt.
class IntegratorStepError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Requested engine cannot represent the requested system size.
class EngineMismatchError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Configuration problem; `key_path` names the offending entry
/// (e.g. "protocol.k").
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key_path, const std::string& what)
        : std::runtime_error(key_path.empty() ? what : key_path + ": " + what),
          key_path_(std::move(key_path)) {}

    const std::string& key_path() const noexcept { return key_path_; }

private:
    std::string key_path_;
};

}  // namespace kicktop
