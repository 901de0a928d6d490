#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "raincap/grad/ops.hpp"
#include "raincap/grad/tensor.hpp"

namespace raincap::grad {

template <class T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

template <class T>
std::vector<Tensor<T>> tensors_of(const NamedTensors<T>& named) {
  std::vector<Tensor<T>> out;
  out.reserve(named.size());
  for (const auto& [name, t] : named) out.push_back(t);
  return out;
}

/// Copies values by name from `source` into `dest`. Throws when a destination
/// name is missing from the source or extents differ.
template <class T, class U>
void copy_values(const NamedTensors<U>& source, NamedTensors<T>& dest);

/// y = x W + b with W stored [in, out].
template <class T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  Linear() = default;
  Linear(int in, int out, std::mt19937_64& rng, bool with_bias = true);

  int in_features() const { return weight.dim(0); }
  int out_features() const { return weight.dim(1); }
  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(const std::string& prefix, NamedTensors<T>& params) const;
};

/// Square-kernel convolution with optional bias.
template <class T>
struct Conv2d {
  Tensor<T> weight;  // [out, in, k, k]
  Tensor<T> bias;    // [1, out, 1, 1]
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(int in, int out, int kernel, int stride, int pad, std::mt19937_64& rng, bool with_bias = true);

  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(const std::string& prefix, NamedTensors<T>& params) const;
};

template <class T>
struct BatchNorm2d {
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormStats<T> stats;

  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels);

  Tensor<T> forward(const Tensor<T>& x, bool training);
  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(const std::string& prefix, NamedTensors<T>& params) const;
  void collect_buffers(const std::string& prefix, NamedTensors<T>& buffers) const;
};

extern template struct Linear<float>;
extern template struct Linear<double>;
extern template struct Conv2d<float>;
extern template struct Conv2d<double>;
extern template struct BatchNorm2d<float>;
extern template struct BatchNorm2d<double>;

}  // namespace raincap::grad
