#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "smart/parameters.hpp"

namespace smart {

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  /// 0 checks every coordinate; otherwise a seeded sample per parameter.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
  /// Relative error is |a - n| / max(|a|, |n|, floor) where floor is the
  /// larger of abs_floor and roundoff_ulps·ε·|f| / (2·eps·tol), the gradient
  /// size at which the finite difference's own rounding error reaches tol.
  double abs_floor = 1e-7;
  double roundoff_ulps = 8.0;
};

struct ParamGradError {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // probes that crossed a ReLU kink
};

struct GradCheckReport {
  bool passed = false;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::vector<ParamGradError> per_param;
};

/// Compares reverse-mode gradients of `loss_fn` against central differences.
/// `loss_fn` must be deterministic and return a scalar built from `params`.
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, ParameterSet& params,
                           const GradCheckOptions& options = {});

/// Same, with caller-supplied analytic gradients (one vector per parameter).
/// Lets tests feed a deliberately corrupted gradient.
GradCheckReport grad_check_against(const std::function<Tensor()>& loss_fn, ParameterSet& params,
                                   const std::vector<std::vector<double>>& analytic,
                                   const GradCheckOptions& options = {});

/// Runs loss_fn on a fresh tape, zeroes grads and backpropagates.
/// Returns the loss value.
double compute_gradients(const std::function<Tensor()>& loss_fn, ParameterSet& params);

}  // namespace smart
