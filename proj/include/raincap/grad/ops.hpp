#pragma once

#include <span>
#include <vector>

#include "raincap/grad/tensor.hpp"

namespace raincap::grad {

// Elementwise binary ops broadcast numpy-style: ranks are right-aligned and
// each extent pair must be equal or contain a 1. This covers the scalar and
// per-channel constants ([1,C,1,1]) as well as single-channel maps spread over
// colour channels ([N,1,H,W] against [N,3,H,W]).
template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

/// scale * x + shift.
template <class T> Tensor<T> affine(const Tensor<T>& x, T scale, T shift);
/// max(x, lo); the gradient is passed only where x > lo.
template <class T> Tensor<T> clamp_min(const Tensor<T>& x, T lo);

template <class T> Tensor<T> relu(const Tensor<T>& x);
template <class T> Tensor<T> sigmoid(const Tensor<T>& x);
template <class T> Tensor<T> tanh(const Tensor<T>& x);

/// [m,k] x [k,n] -> [m,n].
template <class T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// Batched [B,m,k] x [B,k,n] -> [B,m,n].
template <class T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b);

/// Cross-correlation of [N,Cin,H,W] with [Cout,Cin,kh,kw], zero padded.
template <class T> Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, int stride, int pad);

/// Numerically stabilised softmax along `axis`.
template <class T> Tensor<T> softmax(const Tensor<T>& x, int axis);

/// Averages contiguous bins [floor(i*H/oh), ceil((i+1)*H/oh)) of an [N,C,H,W] input.
template <class T> Tensor<T> adaptive_avg_pool2d(const Tensor<T>& x, int out_h, int out_w);
template <class T> Tensor<T> upsample_nearest(const Tensor<T>& x, int factor);
template <class T> Tensor<T> concat(std::span<const Tensor<T>> parts, int axis);
template <class T> Tensor<T> concat(std::initializer_list<Tensor<T>> parts, int axis) {
  return concat(std::span<const Tensor<T>>(parts.begin(), parts.size()), axis);
}

/// Running statistics owned by a batch-norm layer. Not differentiated.
template <class T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  explicit BatchNormStats(int channels = 0);
};

/// Per-channel normalisation of [N,C,H,W] (or [N,C]). Training mode uses
/// batch statistics and updates `stats`; otherwise the running statistics.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormStats<T>& stats,
                     bool training);
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, const BatchNormStats<T>& stats);

template <class T> Tensor<T> reshape(const Tensor<T>& x, const Shape& shape);
template <class T> Tensor<T> permute(const Tensor<T>& x, std::span<const int> order);
template <class T> Tensor<T> permute(const Tensor<T>& x, std::initializer_list<int> order) {
  return permute(x, std::span<const int>(order.begin(), order.size()));
}
/// Contiguous range [start, start+length) along `axis`.
template <class T> Tensor<T> slice(const Tensor<T>& x, int axis, int start, int length);
/// Rows of a [V,m] table -> [ids.size(), m].
template <class T> Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids);

template <class T> Tensor<T> sum(const Tensor<T>& x);
template <class T> Tensor<T> mean(const Tensor<T>& x);
/// Mean over one axis, which is removed.
template <class T> Tensor<T> mean_axis(const Tensor<T>& x, int axis);

// Losses reduce by the mean over all elements.
template <class T> Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target);
template <class T> Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target);
/// Mean of -log softmax(logits)[target] over rows whose target != ignore_id.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets, int ignore_id = -1);

/// Extents after right-aligned broadcasting; throws ShapeError when incompatible.
Shape broadcast_shape(const Shape& a, const Shape& b);

}  // namespace raincap::grad
