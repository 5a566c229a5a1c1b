// Finite-difference checks of every autodiff primitive and composed layer.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jointud/gradcheck.hpp"

namespace jointud {

struct GradientSuiteOptions {
  std::size_t instances = 20;  // random instances per check
  std::uint64_t seed = 94;
  double tolerance = 1e-4;
};

// One report per check; max_rel_error is the maximum over all instances.
std::vector<ad::GradCheckReport> run_gradient_suite(const GradientSuiteOptions& options = {});

std::string format_gradient_report(const std::vector<ad::GradCheckReport>& reports);

}  // namespace jointud
