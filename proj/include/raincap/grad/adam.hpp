#pragma once

#include <cstdint>
#include <vector>

#include "raincap/grad/tensor.hpp"

namespace raincap::grad {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are kept per parameter and always match
/// its extent.
template <class T>
class Adam {
 public:
  explicit Adam(std::vector<Tensor<T>> params, AdamOptions options = {});

  /// Applies one update. Throws std::logic_error if a parameter has no gradient.
  void step();
  void zero_grad();

  std::int64_t step_count() const { return steps_; }
  const AdamOptions& options() const { return options_; }
  void set_lr(double lr) { options_.lr = lr; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }

 private:
  std::vector<Tensor<T>> params_;
  AdamOptions options_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  std::int64_t steps_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace raincap::grad
