#pragma once

#include <functional>
#include <string>
#include <vector>

#include "masktab/numerics/tape.hpp"

namespace masktab::num {

/// Builds a scalar loss on a fresh tape, binding parameters with Tape::param.
using LossBuilder = std::function<Var(Tape&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t entries_checked = 0;
};

/// Compares reverse-mode gradients against central differences over every
/// entry of the named parameters (all parameters when `names` is empty).
/// Error per entry is |analytic − numeric| / max(1, |analytic|, |numeric|).
/// Throws NumericError if any evaluation is non-finite.
GradCheckResult grad_check_detailed(const LossBuilder& f, ParamStore& params,
                                    const std::vector<std::string>& names = {},
                                    double step = 1e-4);

inline double grad_check(const LossBuilder& f, ParamStore& params,
                         const std::vector<std::string>& names = {}, double step = 1e-4) {
  return grad_check_detailed(f, params, names, step).max_relative_error;
}

}  // namespace masktab::num
