#pragma once

// The library-wide gradient check: every differentiable primitive plus the
// composite blocks at reduced sizes, all in double precision.

#include <string>
#include <vector>

#include "prl/gradcheck.hpp"

namespace prl {

struct GradSuiteOptions {
  /// Probes per checked tensor (0 = every element).
  std::size_t max_probes = 24;
  double step = 1e-6;
  std::uint64_t seed = 2024;
  /// Only run cases whose name contains this substring.
  std::string filter;
};

struct GradSuiteCase {
  std::string name;
  GradCheckReport report;  // worst over the case's inputs and parameters
  double seconds = 0;
};

std::vector<std::string> grad_suite_names();
std::vector<GradSuiteCase> run_grad_suite(const GradSuiteOptions& options = {});

}  // namespace prl
