// Finite-difference verification of recorded gradients (64-bit).
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "jointud/autodiff.hpp"

namespace jointud::ad {

struct GradCheckReport {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error <= tolerance; }
};

constexpr double kFiniteDifferenceStep = 1e-5;

// |analytic - numeric| / max(|analytic|, |numeric|, floor)
double relative_error(double analytic, double numeric, double floor = 1e-3);

using InputFunction = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

// Checks d f / d inputs at the given point with central differences.
GradCheckReport grad_check(const std::string& name, const InputFunction& f, const std::vector<Tensor<double>>& point,
                           double tolerance, double h = kFiniteDifferenceStep);

using ParamFunction = std::function<Var<double>(Tape<double>&)>;

// Checks d f / d parameters. At most max_entries_per_param entries of each
// parameter are probed (chosen with a fixed stride), 0 meaning all of them.
GradCheckReport grad_check_params(const std::string& name, const ParamFunction& f, ParameterStore<double>& params,
                                  double tolerance, std::size_t max_entries_per_param = 0,
                                  double h = kFiniteDifferenceStep);

}  // namespace jointud::ad
