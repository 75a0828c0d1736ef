#pragma once

#include <stdexcept>
#include <string>

namespace postshock {

/// Base class for all library failures.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent inputs (files, flags, dimension mismatches).
/// The CLI maps these to exit code 2.
struct InputError : Error {
  using Error::Error;
};

/// Numerical failures during estimation. The CLI maps these to exit code 3.
struct NumericError : Error {
  using Error::Error;
};

/// Design matrix is rank deficient or nearly singular.
struct SingularDesignError : NumericError {
  using NumericError::NumericError;
};

/// A donor carries a zero shock-effect variance, which would absorb all
/// inverse-variance weight.
struct DegenerateVarianceError : NumericError {
  using NumericError::NumericError;
};

/// A donor's OLS residuals have no spread, so they cannot be resampled.
struct DegenerateResidualsError : NumericError {
  using NumericError::NumericError;
};

/// A covariate column has zero spread, so it cannot be standardized.
struct StandardizationError : InputError {
  using InputError::InputError;
};

}  // namespace postshock
