#include "raincap/grad/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace raincap::grad {

GradCheckResult check_gradients(const std::function<Tensor<double>()>& loss, std::span<Tensor<double>> wrt,
                                const GradCheckOptions& options) {
  for (auto& t : wrt) {
    if (!t.is_leaf() || !t.requires_grad()) throw std::invalid_argument("gradcheck: inputs must be leaves requiring grad");
    t.clear_grad();
  }
  {
    Tensor<double> l = loss();
    l.backward();
  }
  std::vector<std::vector<double>> analytic;
  for (auto& t : wrt) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
    }
  }

  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    auto values = wrt[k].mutable_data();
    std::vector<std::size_t> entries(values.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (options.max_entries > 0 && entries.size() > static_cast<std::size_t>(options.max_entries)) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(static_cast<std::size_t>(options.max_entries));
      std::sort(entries.begin(), entries.end());
    }
    for (std::size_t i : entries) {
      const double original = values[i];
      values[i] = original + options.step;
      const double plus = loss().item();
      values[i] = original - options.step;
      const double minus = loss().item();
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.probes;
      if (rel > result.max_rel_error || result.worst.empty()) {
        if (rel >= result.max_rel_error) {
          result.max_rel_error = rel;
          std::ostringstream os;
          os << k << '[' << i << "] analytic=" << a << " numeric=" << numeric;
          result.worst = os.str();
        }
      }
    }
  }
  for (auto& t : wrt) t.clear_grad();
  return result;
}

}  // namespace raincap::grad
