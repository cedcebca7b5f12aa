#pragma once

#include <string>
#include <vector>

#include "mglow/layers.hpp"

namespace mglow {

struct CheckResult {
  std::string name;
  double worst = 0.0;  // worst observed value of the checked quantity
  double tolerance = 0.0;
  bool pass = false;
};

// Oracle suite over every manifold: layer and model round trips, analytic
// log-dets against finite differences, and analytic gradients against
// finite-difference gradients. `fault` is active while the suite runs.
std::vector<CheckResult> run_checks(std::uint64_t seed, Fault fault = Fault::None);

std::string format_check(const CheckResult& r);

}  // namespace mglow
