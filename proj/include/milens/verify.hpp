#pragma once

#include <string>
#include <vector>

namespace milens {

struct VerifyCheck {
  std::string name;
  bool passed = false;
  std::string detail;  // measured value or failure reason
};

// Fast invariant suite: estimator identities and bounds, gradient spot
// checks, flow round-trip, analytic-MI closed form, optimizer behavior.
// Each check runs independently; exceptions are caught and reported as
// failures.
std::vector<VerifyCheck> run_verify_suite();

}  // namespace milens
