#pragma once

#include <stdexcept>
#include <string>

namespace gridloop {

// Bad user input: malformed fixture, inconsistent parameters, bad flags.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failure: singular matrix, instability, non-convergence, blow-up.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// s hit a root of the denominator during evaluation.
struct PoleHit : NumericError {
  using NumericError::NumericError;
};

}  // namespace gridloop
