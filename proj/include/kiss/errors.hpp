#pragma once

#include <stdexcept>
#include <string>

namespace kiss {

/// Malformed or invalid user input (files, flags, request bodies).
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The portfolio has no sensitivity to any factor direction at r = 0.
class DegenerateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An operation required a converged single-factor direction and did not get one.
class ConvergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A calibration artifact no longer matches the portfolio it is applied to.
class StaleCalibrationError : public InputError {
public:
    using InputError::InputError;
};

}  // namespace kiss
