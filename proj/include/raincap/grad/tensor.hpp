#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace raincap::grad {

/// Extents of a dense row-major tensor, rank 0..4.
class Shape {
 public:
  static constexpr int kMaxRank = 4;

  Shape() = default;
  Shape(std::initializer_list<int> extents);
  explicit Shape(std::span<const int> extents);

  int rank() const { return rank_; }
  int operator[](int axis) const { return extents_.at(static_cast<std::size_t>(axis)); }
  int& operator[](int axis) { return extents_.at(static_cast<std::size_t>(axis)); }
  std::int64_t numel() const;
  std::span<const int> extents() const { return {extents_.data(), static_cast<std::size_t>(rank_)}; }

  bool operator==(const Shape& other) const;
  bool operator!=(const Shape& other) const { return !(*this == other); }

  std::string str() const;

 private:
  std::array<int, kMaxRank> extents_{};
  int rank_ = 0;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <class T>
class Tensor;

namespace detail {

template <class T>
struct Node;

template <class T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a backward pass reaches this tensor
  bool requires_grad = false;
  std::shared_ptr<Node<T>> producer;  // null for leaves
};

/// Receives the output value, the output gradient and one gradient buffer per
/// input (null when that input does not require a gradient).
template <class T>
using BackwardFn =
    std::function<void(std::span<const T> out, std::span<const T> gout, std::span<T* const> gin)>;

template <class T>
struct Node {
  std::string_view kind;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  BackwardFn<T> backward;
};

std::uint64_t next_sequence_number();

}  // namespace detail

/// Whether newly created ops are recorded for differentiation. Thread-local.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

/// Disables graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense tensor handle participating in a reverse-mode graph. Copies share
/// storage; use clone() for an independent copy.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, T value, bool requires_grad = false);
  static Tensor from_data(const Shape& shape, std::vector<T> data, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  int dim(int axis) const { return impl().shape[axis]; }
  int rank() const { return impl().shape.rank(); }
  std::int64_t numel() const { return impl().shape.numel(); }

  std::span<const T> data() const { return impl().data; }
  /// Direct write access. Only meaningful for leaves (parameters, inputs).
  std::span<T> mutable_data() { return impl().data; }
  T item() const;
  T at(std::int64_t flat) const { return impl().data.at(static_cast<std::size_t>(flat)); }

  bool requires_grad() const { return impl().requires_grad; }
  void set_requires_grad(bool on);
  bool is_leaf() const { return impl().producer == nullptr; }

  bool has_grad() const { return !impl().grad.empty(); }
  std::span<const T> grad() const { return impl().grad; }
  std::span<T> mutable_grad() { return impl().grad; }
  void zero_grad();
  void clear_grad() { impl().grad.clear(); }

  /// Leaf copy without history.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  /// Reverse pass from a scalar. Leaf gradients accumulate across calls.
  void backward() const;

  /// Name of the op that produced this tensor ("leaf" for leaves).
  std::string_view op_kind() const;

  detail::TensorImpl<T>& impl() const;
  const std::shared_ptr<detail::TensorImpl<T>>& impl_ptr() const { return impl_; }

  /// Builds an op result, recording a graph node when grad mode is on and some
  /// input requires a gradient.
  static Tensor make_result(std::string_view kind, const Shape& shape, std::vector<T> data,
                            std::initializer_list<Tensor> inputs, detail::BackwardFn<T> backward);
  static Tensor make_result(std::string_view kind, const Shape& shape, std::vector<T> data,
                            std::span<const Tensor> inputs, detail::BackwardFn<T> backward);

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl<T>> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

/// Converts between precisions; the result is a leaf.
template <class To, class From>
Tensor<To> cast(const Tensor<From>& x, bool requires_grad = false) {
  std::vector<To> out(x.data().begin(), x.data().end());
  return Tensor<To>::from_data(x.shape(), std::move(out), requires_grad);
}

}  // namespace raincap::grad
