#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace stablemv {

// Base of everything the library throws on purpose.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A parameter outside its admissible window (alpha outside (1,2), rho outside (0,1), ...).
class DomainError : public Error {
public:
    using Error::Error;
};

// A time argument that is not a node of the grid it refers to.
class GridAlignmentError : public Error {
public:
    using Error::Error;
};

class EmptyDataError : public Error {
public:
    using Error::Error;
};

// Exact transport refused because the supports exceed the configured cap.
class CapacityError : public Error {
public:
    using Error::Error;
};

// NaN/overflow or a matrix that should be SPD and is not.
class NumericalError : public Error {
public:
    using Error::Error;
};

// A declared structural assumption on the coefficients failed at runtime.
class AssumptionError : public Error {
public:
    using Error::Error;
};

class CalibrationError : public Error {
public:
    using Error::Error;
};

// Picard iteration hit its cap. Carries the residual trace for diagnostics.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, std::vector<double> residuals)
        : Error(what), residuals_(std::move(residuals)) {}

    const std::vector<double>& residuals() const noexcept { return residuals_; }

private:
    std::vector<double> residuals_;
};

}  // namespace stablemv
