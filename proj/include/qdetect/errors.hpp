// Typed errors shared by the library and the command line.
// Each error carries the process exit code the CLI reports for it.
#pragma once

#include <stdexcept>
#include <string>

namespace qdetect {

enum class ExitCode : int {
    ok = 0,
    config = 2,     // invalid parameters or options
    data = 3,       // unreadable or inconsistent input data
    math = 4,       // a mathematical assumption of the model fails
};

/// Base class for every library error. `kind` is a short machine-readable tag.
class Error : public std::runtime_error {
public:
    Error(ExitCode code, std::string kind, const std::string& message)
        : std::runtime_error(message), code_(code), kind_(std::move(kind)) {}

    ExitCode code() const noexcept { return code_; }
    const std::string& kind() const noexcept { return kind_; }

private:
    ExitCode code_;
    std::string kind_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& message, std::string kind = "config")
        : Error(ExitCode::config, std::move(kind), message) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& message, std::string kind = "data")
        : Error(ExitCode::data, std::move(kind), message) {}
};

class MathError : public Error {
public:
    explicit MathError(const std::string& message, std::string kind = "math")
        : Error(ExitCode::math, std::move(kind), message) {}
};

/// |beta * scale| >= 1: the jump moment generating function diverges.
class MgfDivergence : public MathError {
public:
    explicit MgfDivergence(const std::string& m) : MathError(m, "mgf_divergence") {}
};

/// The fixed-point equation for beta0 has no root in the admissible bracket.
class NoRoot : public MathError {
public:
    explicit NoRoot(const std::string& m) : MathError(m, "no_root") {}
};

/// The positivity assumption of the threshold problem is violated.
class AssumptionViolated : public MathError {
public:
    AssumptionViolated(const std::string& m, double value)
        : MathError(m, "assumption_violated"), value_(value) {}
    double value() const noexcept { return value_; }

private:
    double value_;
};

/// gamma^2 = 4 makes the closed-form second derivative at 0 undefined.
class DegenerateGamma : public MathError {
public:
    explicit DegenerateGamma(const std::string& m) : MathError(m, "degenerate_gamma") {}
};

/// A leading coefficient of the power-series recurrence vanishes.
class RecurrenceBreakdown : public MathError {
public:
    explicit RecurrenceBreakdown(const std::string& m) : MathError(m, "recurrence_breakdown") {}
};

/// u(x) never meets x - 1 before the integration guard near x = 1.
class NoCrossing : public MathError {
public:
    explicit NoCrossing(const std::string& m) : MathError(m, "no_crossing") {}
};

/// The adaptive integrator could not keep the step above its floor.
class StepUnderflow : public MathError {
public:
    explicit StepUnderflow(const std::string& m) : MathError(m, "step_underflow") {}
};

/// A quadrature did not reach its tolerance.
class QuadratureFailure : public MathError {
public:
    explicit QuadratureFailure(const std::string& m) : MathError(m, "quadrature_failure") {}
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public ConfigError {
public:
    explicit DomainError(const std::string& m) : ConfigError(m, "domain") {}
};

}  // namespace qdetect
