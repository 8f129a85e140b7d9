#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace gradsuite {

struct CaseResult {
  std::string name;
  std::size_t instances = 0;
  std::size_t failures = 0;
  double worst_rel_error = 0.0;
};

/// Every differentiable op and composed block, each checked against central
/// differences on `instances` seeded random inputs.
std::vector<CaseResult> run(std::size_t instances, double rtol = 1e-4);

/// Names of all cases, in run order.
std::vector<std::string> case_names();

}  // namespace gradsuite
