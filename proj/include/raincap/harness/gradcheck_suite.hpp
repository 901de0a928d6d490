#pragma once

#include <cstdint>
#include <vector>

#include "raincap/grad/op_suite.hpp"

namespace raincap::harness {

inline constexpr double kPrimitiveTolerance = 1e-4;
inline constexpr double kCompositeTolerance = 1e-3;

/// L_IRS through the three U-Nets, L_SVFM through reconstruction and both
/// encoders, and the captioner's teacher-forced loss. All in double at tiny
/// widths.
std::vector<grad::GradCheckCase> composite_gradcheck_cases();

struct SuiteResult {
  std::string name;
  bool composite = false;
  double tolerance = 0.0;
  grad::GradCheckResult result;
  bool passed() const { return result.passed(tolerance); }
};

std::vector<SuiteResult> run_gradcheck_suite(std::uint64_t seed);

}  // namespace raincap::harness
