#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "raincap/grad/tensor.hpp"

namespace raincap::rain {

/// Single-channel float field, row-major.
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  Plane() = default;
  Plane(int h, int w, float fill = 0.0f);

  std::size_t size() const { return values.size(); }
  float& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  bool same_extent(const Plane& o) const { return height == o.height && width == o.width; }
};

struct DepthMap : Plane {
  using Plane::Plane;
};
struct TransmissionMap : Plane {
  using Plane::Plane;
};
struct RainLayer : Plane {
  using Plane::Plane;
};

/// Three-channel planar (CHW) float image. Values are nominally in [0,1] but
/// are never clamped except at export.
struct Image {
  static constexpr int channels = 3;
  int height = 0;
  int width = 0;
  std::vector<float> values;

  Image() = default;
  Image(int h, int w, float fill = 0.0f);

  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
  std::size_t size() const { return values.size(); }
  float& at(int c, int y, int x) { return values[c * plane_size() + static_cast<std::size_t>(y) * width + x]; }
  float at(int c, int y, int x) const { return values[c * plane_size() + static_cast<std::size_t>(y) * width + x]; }
  bool same_extent(const Image& o) const { return height == o.height && width == o.width; }
  bool same_extent(const Plane& o) const { return height == o.height && width == o.width; }
};

bool all_finite(const Image& img);
double mean(const Image& img);
/// Standard deviation over every value of every channel.
double stddev(const Image& img);
double mse(const Image& a, const Image& b);
double max_abs_diff(const Image& a, const Image& b);

/// Image -> [1,3,H,W]; Plane -> [1,1,H,W].
template <class T> grad::Tensor<T> to_tensor(const Image& img);
template <class T> grad::Tensor<T> to_tensor(const Plane& p);
/// Stacks same-sized images into [N,3,H,W].
template <class T> grad::Tensor<T> stack(const std::vector<const Image*>& imgs);

/// Reads sample `n` of an [N,3,H,W] tensor.
template <class T> Image image_from_tensor(const grad::Tensor<T>& t, int n = 0);
/// Reads sample `n` of an [N,1,H,W] tensor.
template <class T> Plane plane_from_tensor(const grad::Tensor<T>& t, int n = 0);

}  // namespace raincap::rain
