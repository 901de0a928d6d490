#include "raincap/rain/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace raincap::rain {

Plane::Plane(int h, int w, float fill) : height(h), width(w) {
  if (h < 0 || w < 0) throw std::invalid_argument("plane extents must be non-negative");
  values.assign(static_cast<std::size_t>(h) * w, fill);
}

Image::Image(int h, int w, float fill) : height(h), width(w) {
  if (h < 0 || w < 0) throw std::invalid_argument("image extents must be non-negative");
  values.assign(static_cast<std::size_t>(channels) * h * w, fill);
}

bool all_finite(const Image& img) {
  return std::all_of(img.values.begin(), img.values.end(), [](float v) { return std::isfinite(v); });
}

double mean(const Image& img) {
  if (img.values.empty()) return 0.0;
  double acc = 0.0;
  for (float v : img.values) acc += v;
  return acc / static_cast<double>(img.values.size());
}

double stddev(const Image& img) {
  if (img.values.empty()) return 0.0;
  const double m = mean(img);
  double acc = 0.0;
  for (float v : img.values) acc += (v - m) * (v - m);
  return std::sqrt(acc / static_cast<double>(img.values.size()));
}

double mse(const Image& a, const Image& b) {
  if (!a.same_extent(b)) throw std::invalid_argument("mse: image extents differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = double(a.values[i]) - double(b.values[i]);
    acc += d * d;
  }
  return a.values.empty() ? 0.0 : acc / static_cast<double>(a.values.size());
}

double max_abs_diff(const Image& a, const Image& b) {
  if (!a.same_extent(b)) throw std::invalid_argument("max_abs_diff: image extents differ");
  double m = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) m = std::max(m, std::abs(double(a.values[i]) - double(b.values[i])));
  return m;
}

template <class T>
grad::Tensor<T> to_tensor(const Image& img) {
  std::vector<T> v(img.values.begin(), img.values.end());
  return grad::Tensor<T>::from_data({1, 3, img.height, img.width}, std::move(v));
}

template <class T>
grad::Tensor<T> to_tensor(const Plane& p) {
  std::vector<T> v(p.values.begin(), p.values.end());
  return grad::Tensor<T>::from_data({1, 1, p.height, p.width}, std::move(v));
}

template <class T>
grad::Tensor<T> stack(const std::vector<const Image*>& imgs) {
  if (imgs.empty()) throw std::invalid_argument("stack: no images");
  const int h = imgs.front()->height, w = imgs.front()->width;
  std::vector<T> v;
  v.reserve(imgs.size() * imgs.front()->size());
  for (const Image* img : imgs) {
    if (img->height != h || img->width != w) throw std::invalid_argument("stack: image extents differ");
    v.insert(v.end(), img->values.begin(), img->values.end());
  }
  return grad::Tensor<T>::from_data({static_cast<int>(imgs.size()), 3, h, w}, std::move(v));
}

template <class T>
Image image_from_tensor(const grad::Tensor<T>& t, int n) {
  if (t.rank() != 4 || t.dim(1) != 3 || n < 0 || n >= t.dim(0))
    throw grad::ShapeError("image_from_tensor: expected [N,3,H,W], got " + t.shape().str());
  Image img(t.dim(2), t.dim(3));
  const auto d = t.data();
  const std::size_t off = static_cast<std::size_t>(n) * img.size();
  for (std::size_t i = 0; i < img.size(); ++i) img.values[i] = static_cast<float>(d[off + i]);
  return img;
}

template <class T>
Plane plane_from_tensor(const grad::Tensor<T>& t, int n) {
  if (t.rank() != 4 || t.dim(1) != 1 || n < 0 || n >= t.dim(0))
    throw grad::ShapeError("plane_from_tensor: expected [N,1,H,W], got " + t.shape().str());
  Plane p(t.dim(2), t.dim(3));
  const auto d = t.data();
  const std::size_t off = static_cast<std::size_t>(n) * p.size();
  for (std::size_t i = 0; i < p.size(); ++i) p.values[i] = static_cast<float>(d[off + i]);
  return p;
}

#define RAINCAP_INSTANTIATE_IMAGE(T)                                            \
  template grad::Tensor<T> to_tensor<T>(const Image&);                          \
  template grad::Tensor<T> to_tensor<T>(const Plane&);                          \
  template grad::Tensor<T> stack<T>(const std::vector<const Image*>&);          \
  template Image image_from_tensor<T>(const grad::Tensor<T>&, int);             \
  template Plane plane_from_tensor<T>(const grad::Tensor<T>&, int);
RAINCAP_INSTANTIATE_IMAGE(float)
RAINCAP_INSTANTIATE_IMAGE(double)
#undef RAINCAP_INSTANTIATE_IMAGE

}  // namespace raincap::rain
