#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>

#include "fednnu/state_dict.hpp"

namespace fednnu {

struct ValueAndGrad {
  double value = 0.0;
  StateDict grad;
  // Identifies the smooth piece of a piecewise function containing the
  // evaluation point. Probes whose signature differs from the base point
  // straddle a kink and are reported apart from the checked coordinates.
  std::optional<std::uint64_t> kink_signature;
};

// Scalar function of a parameter set that also reports its analytic gradient.
using DifferentiableFn = std::function<ValueAndGrad(const StateDict&)>;

struct GradCheckOptions {
  double eps = 1e-5;
  // Coordinates checked per layer; 0 checks every coordinate.
  std::size_t samples_per_layer = 0;
  std::uint64_t seed = 0;
  // Lower bound of the relative-error denominator; guards coordinates whose
  // analytic and numeric derivatives both vanish.
  double floor = 1e-8;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  LayerId worst_layer;
  std::size_t worst_index = 0;
  // Coordinates whose +-eps probes crossed a kink, and their largest error.
  std::size_t kink_crossings = 0;
  double max_kink_error = 0.0;
};

// Central finite differences against the analytic gradient. Relative error
// per coordinate is |a - n| / max(floor, |a|, |n|); the maximum is returned.
// Throws UsageError for eps outside (0, 1e-2] or non-finite parameters,
// NumericError when f returns a non-finite value.
GradCheckResult grad_check(const DifferentiableFn& f, const StateDict& params, const GradCheckOptions& opts = {});

}  // namespace fednnu
