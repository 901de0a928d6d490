#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "raincap/grad/gradcheck.hpp"

namespace raincap::grad {

/// One finite-difference check; `run(seed)` draws fresh random inputs.
struct GradCheckCase {
  std::string name;
  std::function<GradCheckResult(std::uint64_t seed)> run;
};

/// A case for every differentiable primitive, including broadcast variants and
/// both batch-norm modes. Inputs are drawn away from non-differentiable points.
std::vector<GradCheckCase> primitive_gradcheck_cases();

}  // namespace raincap::grad
