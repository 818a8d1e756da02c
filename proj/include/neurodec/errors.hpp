#pragma once

#include <stdexcept>
#include <string>

namespace neurodec {

// Invalid inputs: malformed files, mismatched shapes, unknown ids, bad flags.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Numerical failure: ill-conditioned system, non-PSD kernel, degenerate leverage.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what, double diagnostic = 0.0)
        : std::runtime_error(what), diagnostic_(diagnostic) {}

    // Context-dependent figure, e.g. the reciprocal condition estimate that
    // tripped the check.
    double diagnostic() const { return diagnostic_; }

private:
    double diagnostic_;
};

}  // namespace neurodec
