#include "raincap/grad/nn.hpp"

#include <cmath>
#include <unordered_map>

namespace raincap::grad {

namespace {

// Draws in double so float and double models built from one seed agree.
template <class T>
Tensor<T> uniform(const Shape& shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> data(static_cast<std::size_t>(shape.numel()));
  for (auto& v : data) v = static_cast<T>(dist(rng));
  return Tensor<T>::from_data(shape, std::move(data), true);
}

}  // namespace

template <class T, class U>
void copy_values(const NamedTensors<U>& source, NamedTensors<T>& dest) {
  std::unordered_map<std::string, const Tensor<U>*> index;
  for (const auto& [name, t] : source) index.emplace(name, &t);
  for (auto& [name, t] : dest) {
    auto it = index.find(name);
    if (it == index.end()) throw std::invalid_argument("missing tensor '" + name + "'");
    const Tensor<U>& src = *it->second;
    if (src.shape() != t.shape()) {
      throw ShapeError("tensor '" + name + "' has shape " + src.shape().str() + ", expected " + t.shape().str());
    }
    auto out = t.mutable_data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(src.data()[i]);
  }
}

template void copy_values(const NamedTensors<float>&, NamedTensors<float>&);
template void copy_values(const NamedTensors<float>&, NamedTensors<double>&);
template void copy_values(const NamedTensors<double>&, NamedTensors<float>&);
template void copy_values(const NamedTensors<double>&, NamedTensors<double>&);

template <class T>
Linear<T>::Linear(int in, int out, std::mt19937_64& rng, bool with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = uniform<T>(Shape{in, out}, bound, rng);
  if (with_bias) bias = Tensor<T>::zeros(Shape{out}, true);
}

template <class T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  Tensor<T> y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

template <class T>
void Linear<T>::collect(const std::string& prefix, NamedTensors<T>& params) const {
  params.emplace_back(prefix + "weight", weight);
  if (bias.defined()) params.emplace_back(prefix + "bias", bias);
}

template <class T>
Conv2d<T>::Conv2d(int in, int out, int kernel, int stride_, int pad_, std::mt19937_64& rng, bool with_bias)
    : stride(stride_), pad(pad_) {
  // He-uniform for relu networks.
  const double fan_in = static_cast<double>(in) * kernel * kernel;
  weight = uniform<T>(Shape{out, in, kernel, kernel}, std::sqrt(6.0 / fan_in), rng);
  if (with_bias) bias = Tensor<T>::zeros(Shape{1, out, 1, 1}, true);
}

template <class T>
Tensor<T> Conv2d<T>::operator()(const Tensor<T>& x) const {
  Tensor<T> y = conv2d(x, weight, stride, pad);
  return bias.defined() ? add(y, bias) : y;
}

template <class T>
void Conv2d<T>::collect(const std::string& prefix, NamedTensors<T>& params) const {
  params.emplace_back(prefix + "weight", weight);
  if (bias.defined()) params.emplace_back(prefix + "bias", bias);
}

template <class T>
BatchNorm2d<T>::BatchNorm2d(int channels)
    : gamma(Tensor<T>::full(Shape{channels}, T(1), true)),
      beta(Tensor<T>::zeros(Shape{channels}, true)),
      stats(channels) {}

template <class T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, bool training) {
  return batch_norm(x, gamma, beta, stats, training);
}

template <class T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x) const {
  return batch_norm(x, gamma, beta, stats);
}

template <class T>
void BatchNorm2d<T>::collect(const std::string& prefix, NamedTensors<T>& params) const {
  params.emplace_back(prefix + "gamma", gamma);
  params.emplace_back(prefix + "beta", beta);
}

template <class T>
void BatchNorm2d<T>::collect_buffers(const std::string& prefix, NamedTensors<T>& buffers) const {
  buffers.emplace_back(prefix + "running_mean", stats.running_mean);
  buffers.emplace_back(prefix + "running_var", stats.running_var);
}

template struct Linear<float>;
template struct Linear<double>;
template struct Conv2d<float>;
template struct Conv2d<double>;
template struct BatchNorm2d<float>;
template struct BatchNorm2d<double>;

}  // namespace raincap::grad
