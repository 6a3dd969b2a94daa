#pragma once

#include <string>
#include <vector>

namespace qfilt::sim {

struct CheckResult {
  std::string name;
  double residual = 0.0;
  double tol = 0.0;
  bool pass = false;
};

/* Deterministic identity battery over the algebra, the lattice and the
 * filter; every entry reports its worst residual against a pinned
 * tolerance. */
std::vector<CheckResult> algebra_battery();

bool all_pass(const std::vector<CheckResult>& checks);
std::string battery_report(const std::vector<CheckResult>& checks);

}  // namespace qfilt::sim
