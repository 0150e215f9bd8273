#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace otda {

/// Broken precondition or shape agreement at an API boundary. CLI exit code 1.
class ContractViolation : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Invalid experiment or generator configuration. CLI exit code 1.
class ConfigurationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file. The message names the offending line.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Filesystem failure; the message carries the path.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Problem instance outside what an algorithm supports (e.g. brute-force size).
class UnsupportedInstance : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Metric undefined for the given input (e.g. AUC with one class).
class UndefinedMetric : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Requested breakdown needs data the input does not carry.
class FeatureUnavailable : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Floating-point failure. CLI exit code 2.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Kernel-domain Sinkhorn produced inf/NaN or an all-zero scaling.
class NumericOverflow : public NumericError {
public:
    using NumericError::NumericError;
};

class SinkhornNotConverged : public NumericError {
public:
    SinkhornNotConverged(int iterations, double row_residual, double col_residual)
        : NumericError(message(iterations, row_residual, col_residual)),
          iterations_(iterations), row_residual_(row_residual), col_residual_(col_residual) {}

    int iterations() const noexcept { return iterations_; }
    double row_residual() const noexcept { return row_residual_; }
    double col_residual() const noexcept { return col_residual_; }

private:
    static std::string message(int iterations, double row, double col) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "sinkhorn did not converge after %d iterations (row residual %.3e, column residual %.3e)",
                      iterations, row, col);
        return buf;
    }

    int iterations_;
    double row_residual_;
    double col_residual_;
};

/// Input with no spread along any direction (PCA).
class DegenerateProjection : public NumericError {
public:
    using NumericError::NumericError;
};

}  // namespace otda
