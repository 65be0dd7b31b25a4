#pragma once

#include <stdexcept>
#include <string>

namespace uikf {

/// Innovation covariance S is numerically singular (condition number past
/// the library limit, or not positive definite).
class SingularInnovationCovariance : public std::runtime_error {
public:
    explicit SingularInnovationCovariance(const std::string& what)
        : std::runtime_error(what) {}
};

/// (CG)^T S^-1 (CG) is singular: the input-observability rank condition
/// rank(CG) = rank(G) = m does not hold for this model/step.
class RankDeficient : public std::runtime_error {
public:
    explicit RankDeficient(const std::string& what) : std::runtime_error(what) {}
};

/// Experiment configuration is invalid (bad value, unknown key, missing field).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// No trace rows survive the burn-in cutoff.
class EmptyAfterBurnIn : public std::runtime_error {
public:
    explicit EmptyAfterBurnIn(const std::string& what) : std::runtime_error(what) {}
};

/// File could not be read or written.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace uikf
