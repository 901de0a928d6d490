#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "raincap/grad/tensor.hpp"

namespace raincap::grad {

struct GradCheckOptions {
  double step = 1e-5;
  /// Entries probed per tensor; all entries when <= 0.
  int max_entries = 0;
  std::uint64_t seed = 0;
  /// Denominator floor of the relative error.
  double floor = 1e-6;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::int64_t probes = 0;
  std::string worst;  // "<tensor index>[<flat index>] analytic=<a> numeric=<n>"

  bool passed(double tolerance) const { return probes > 0 && max_rel_error < tolerance; }
};

/// Compares analytic gradients of `loss` with central differences
/// (f(x+h) - f(x-h)) / 2h, entry by entry. The relative error of one entry is
/// |a - n| / max(|a|, |n|, floor). `loss` must rebuild its graph on each call.
GradCheckResult check_gradients(const std::function<Tensor<double>()>& loss, std::span<Tensor<double>> wrt,
                                const GradCheckOptions& options = {});

}  // namespace raincap::grad
