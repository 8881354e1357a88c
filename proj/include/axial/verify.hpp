#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace axial {

struct CheckResult {
  std::string group;  // oracle, gradient, cost, data, metrics
  std::string name;
  bool passed = false;
  std::string detail;
};

struct VerifyReport {
  std::vector<CheckResult> checks;
  std::uint64_t nonlocal_32 = 0;  // cost_model(32, 32, 32)
  std::uint64_t axial_32 = 0;

  bool all_passed() const;
};

/// Runs the self-verification property suite: oracle equivalences, gradient
/// checks, cost constants, data invariants and metric checks. Takes a few
/// seconds.
VerifyReport run_verification(std::uint64_t seed = 0);

/// Pass/fail matrix followed by the cost constants.
void write_verify_report(std::ostream& os, const VerifyReport& report);

/// Formats with thousands separators: 1073741824 -> "1,073,741,824".
std::string with_commas(std::uint64_t v);

}  // namespace axial
