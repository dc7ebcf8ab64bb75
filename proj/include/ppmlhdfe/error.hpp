#pragma once

#include <stdexcept>
#include <string>

namespace ppmlhdfe {

// Bad input data or an invalid model specification.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// The estimator could not produce a result.
class EstimationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// The linear predictor is running off to infinity. Almost always caused by
// separated observations that were not removed before fitting.
class DivergenceError : public EstimationError {
public:
    using EstimationError::EstimationError;
};

}  // namespace ppmlhdfe
