#pragma once

#include <functional>
#include <span>

#include "tide/autodiff.hpp"

namespace tide::ad {

// Scalar-valued function of one matrix argument, built on the given tape.
using ScalarFn = std::function<Var(Tape&, Var)>;

// Builds a scalar loss on the tape from parameters it registers itself via
// Tape::leaf. Must be deterministic (fixed noise, fixed inputs).
using ParameterLossFn = std::function<Var(Tape&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  // Location of the worst entry.
  std::size_t worst_tensor = 0;
  Eigen::Index worst_row = 0;
  Eigen::Index worst_col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t entries_checked = 0;
};

// Relative error used throughout: |analytic - numeric| / (|numeric| + 1e-8).
double relative_error(double analytic, double numeric);

// Compares the tape gradient of fn at `point` with central differences of step h.
// Throws NumericError naming the entry when fn is NaN/Inf nearby.
GradCheckResult check_gradients(const ScalarFn& fn, const Matrix& point, double h = 1e-5);

// Same comparison over every entry of every parameter in `params`.
GradCheckResult check_parameter_gradients(const ParameterLossFn& fn,
                                          std::span<Parameter* const> params, double h = 1e-5);

}  // namespace tide::ad
