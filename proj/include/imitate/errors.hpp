#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace imitate {

/// Base class for every error raised by the library. The CLI maps the
/// concrete subclass onto a process exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or precondition on user-supplied values.
class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// A file exists but its contents do not follow the expected layout.
class ParseError : public Error {
public:
    enum class Kind { BadMagic, BadVersion, Truncated, Malformed };

    ParseError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class LimitViolation : public Error {
public:
    LimitViolation(std::size_t joint, double angle, double lo, double hi);
    std::size_t joint() const noexcept { return joint_; }

private:
    std::size_t joint_;
};

/// Iterative inverse kinematics gave up with the residual still above tolerance.
class NotConverged : public Error {
public:
    explicit NotConverged(double residual);
    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

class SamplingError : public Error {
public:
    using Error::Error;
};

}  // namespace imitate
