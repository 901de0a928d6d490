#include "raincap/grad/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace raincap::grad {

Shape::Shape(std::initializer_list<int> extents) : Shape(std::span<const int>(extents.begin(), extents.size())) {}

Shape::Shape(std::span<const int> extents) {
  if (extents.size() > static_cast<std::size_t>(kMaxRank)) {
    throw ShapeError("rank " + std::to_string(extents.size()) + " exceeds 4");
  }
  rank_ = static_cast<int>(extents.size());
  for (int i = 0; i < rank_; ++i) {
    if (extents[i] < 0) throw ShapeError("negative extent in shape");
    extents_[i] = extents[i];
  }
}

std::int64_t Shape::numel() const {
  std::int64_t n = 1;
  for (int i = 0; i < rank_; ++i) n *= extents_[i];
  return n;
}

bool Shape::operator==(const Shape& other) const {
  if (rank_ != other.rank_) return false;
  for (int i = 0; i < rank_; ++i) {
    if (extents_[i] != other.extents_[i]) return false;
  }
  return true;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (int i = 0; i < rank_; ++i) {
    if (i) os << ',';
    os << extents_[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::uint64_t next_sequence_number() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

}  // namespace detail

namespace {
thread_local bool grad_mode_enabled = true;
}

bool GradMode::enabled() { return grad_mode_enabled; }
void GradMode::set_enabled(bool on) { grad_mode_enabled = on; }

template <class T>
detail::TensorImpl<T>& Tensor<T>::impl() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return *impl_;
}

template <class T>
Tensor<T> Tensor<T>::from_data(const Shape& shape, std::vector<T> data, bool requires_grad) {
  if (static_cast<std::int64_t>(data.size()) != shape.numel()) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " + shape.str());
  }
  auto impl = std::make_shared<detail::TensorImpl<T>>();
  impl->shape = shape;
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

template <class T>
Tensor<T> Tensor<T>::zeros(const Shape& shape, bool requires_grad) {
  return from_data(shape, std::vector<T>(static_cast<std::size_t>(shape.numel()), T(0)), requires_grad);
}

template <class T>
Tensor<T> Tensor<T>::full(const Shape& shape, T value, bool requires_grad) {
  return from_data(shape, std::vector<T>(static_cast<std::size_t>(shape.numel()), value), requires_grad);
}

template <class T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from_data(Shape{}, {value}, requires_grad);
}

template <class T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
  return impl().data[0];
}

template <class T>
void Tensor<T>::set_requires_grad(bool on) {
  if (!is_leaf()) throw std::logic_error("requires_grad can only be changed on leaves");
  impl().requires_grad = on;
}

template <class T>
void Tensor<T>::zero_grad() {
  auto& g = impl().grad;
  std::fill(g.begin(), g.end(), T(0));
}

template <class T>
Tensor<T> Tensor<T>::detach() const {
  return from_data(shape(), impl().data, false);
}

template <class T>
std::string_view Tensor<T>::op_kind() const {
  return impl().producer ? impl().producer->kind : std::string_view("leaf");
}

template <class T>
Tensor<T> Tensor<T>::make_result(std::string_view kind, const Shape& shape, std::vector<T> data,
                                 std::initializer_list<Tensor> inputs, detail::BackwardFn<T> backward) {
  return make_result(kind, shape, std::move(data), std::span<const Tensor>(inputs.begin(), inputs.size()),
                     std::move(backward));
}

template <class T>
Tensor<T> Tensor<T>::make_result(std::string_view kind, const Shape& shape, std::vector<T> data,
                                 std::span<const Tensor> inputs, detail::BackwardFn<T> backward) {
  Tensor out = from_data(shape, std::move(data), false);
  if (!GradMode::enabled()) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  auto node = std::make_shared<detail::Node<T>>();
  node->kind = kind;
  node->seq = detail::next_sequence_number();
  node->inputs.reserve(inputs.size());
  for (const auto& t : inputs) node->inputs.push_back(t.impl_ptr());
  node->backward = std::move(backward);
  out.impl_->requires_grad = true;
  out.impl_->producer = std::move(node);
  return out;
}

template <class T>
void Tensor<T>::backward() const {
  auto& root = impl();
  if (root.shape.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + root.shape.str());
  }
  if (!root.requires_grad) throw std::logic_error("backward() on a tensor that does not require grad");

  if (!root.producer) {
    if (root.grad.empty()) root.grad.assign(1, T(0));
    root.grad[0] += T(1);
    return;
  }

  // Every interior tensor reachable from the loss, ordered newest first.
  std::vector<detail::TensorImpl<T>*> interior;
  std::unordered_set<const detail::TensorImpl<T>*> seen;
  std::vector<detail::TensorImpl<T>*> stack{&root};
  seen.insert(&root);
  while (!stack.empty()) {
    auto* t = stack.back();
    stack.pop_back();
    interior.push_back(t);
    for (const auto& in : t->producer->inputs) {
      if (in->producer && in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  std::sort(interior.begin(), interior.end(),
            [](const auto* a, const auto* b) { return a->producer->seq > b->producer->seq; });

  for (auto* t : interior) t->grad.assign(static_cast<std::size_t>(t->shape.numel()), T(0));
  root.grad[0] = T(1);

  std::vector<T*> gin;
  for (auto* t : interior) {
    auto& node = *t->producer;
    gin.assign(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      auto& in = *node.inputs[i];
      if (!in.requires_grad) continue;
      if (in.grad.size() != in.data.size()) in.grad.assign(in.data.size(), T(0));
      gin[i] = in.grad.data();
    }
    node.backward(t->data, t->grad, gin);
  }
  for (auto* t : interior) {
    t->grad.clear();
    t->grad.shrink_to_fit();
  }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace raincap::grad
