#include "raincap/grad/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

namespace raincap::grad {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using MapConstMat = Eigen::Map<const RowMat<T>>;

std::size_t sz(std::int64_t n) { return static_cast<std::size_t>(n); }

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

int normalize_axis(int axis, int rank, const char* op) {
  if (axis < 0) axis += rank;
  require(axis >= 0 && axis < rank, std::string(op) + ": axis out of range");
  return axis;
}

// outer x extent x inner split of a shape around one axis.
struct AxisSplit {
  std::int64_t outer = 1;
  int extent = 1;
  std::int64_t inner = 1;
};

AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (int i = axis + 1; i < s.rank(); ++i) r.inner *= s[i];
  return r;
}

struct Broadcast {
  Shape shape;
  std::array<int, 4> out{1, 1, 1, 1};
  std::array<std::int64_t, 4> stride_a{0, 0, 0, 0};
  std::array<std::int64_t, 4> stride_b{0, 0, 0, 0};
  bool same = false;
};

std::array<int, 4> pad4(const Shape& s) {
  std::array<int, 4> e{1, 1, 1, 1};
  const int off = 4 - s.rank();
  for (int i = 0; i < s.rank(); ++i) e[sz(off + i)] = s[i];
  return e;
}

std::array<std::int64_t, 4> strides4(const std::array<int, 4>& e, const std::array<int, 4>& out) {
  std::array<std::int64_t, 4> st{};
  std::int64_t acc = 1;
  for (int i = 3; i >= 0; --i) {
    st[sz(i)] = (e[sz(i)] == 1 && out[sz(i)] != 1) ? 0 : acc;
    acc *= e[sz(i)];
  }
  return st;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b) {
  Broadcast p;
  p.shape = broadcast_shape(a, b);
  p.same = (a == b);
  const auto ea = pad4(a);
  const auto eb = pad4(b);
  for (int i = 0; i < 4; ++i) p.out[sz(i)] = std::max(ea[sz(i)], eb[sz(i)]);
  p.stride_a = strides4(ea, p.out);
  p.stride_b = strides4(eb, p.out);
  return p;
}

template <class F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  if (p.same) {
    const std::int64_t n = p.shape.numel();
    for (std::int64_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  std::int64_t o = 0;
  for (int i0 = 0; i0 < p.out[0]; ++i0) {
    for (int i1 = 0; i1 < p.out[1]; ++i1) {
      for (int i2 = 0; i2 < p.out[2]; ++i2) {
        const std::int64_t ba = i0 * p.stride_a[0] + i1 * p.stride_a[1] + i2 * p.stride_a[2];
        const std::int64_t bb = i0 * p.stride_b[0] + i1 * p.stride_b[1] + i2 * p.stride_b[2];
        for (int i3 = 0; i3 < p.out[3]; ++i3) {
          f(o++, ba + i3 * p.stride_a[3], bb + i3 * p.stride_b[3]);
        }
      }
    }
  }
}

// dfa(a, b) and dfb(a, b) are the partial derivatives of the op.
template <class T, class Fwd, class DA, class DB>
Tensor<T> binary_op(std::string_view kind, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, DA dfa, DB dfb) {
  Broadcast plan;
  try {
    plan = plan_broadcast(a.shape(), b.shape());
  } catch (const ShapeError&) {
    throw ShapeError(std::string(kind) + ": cannot broadcast " + a.shape().str() + " with " + b.shape().str());
  }
  std::vector<T> out(sz(plan.shape.numel()));
  const auto av = a.data();
  const auto bv = b.data();
  for_each_broadcast(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) { out[sz(o)] = fwd(av[sz(ia)], bv[sz(ib)]); });
  return Tensor<T>::make_result(kind, plan.shape, std::move(out), {a, b},
                                [a, b, plan, dfa, dfb](std::span<const T>, std::span<const T> g, std::span<T* const> gin) {
                                  const auto av = a.data();
                                  const auto bv = b.data();
                                  T* ga = gin[0];
                                  T* gb = gin[1];
                                  for_each_broadcast(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                                    const T x = av[sz(ia)], y = bv[sz(ib)];
                                    if (ga) ga[ia] += g[sz(o)] * dfa(x, y);
                                    if (gb) gb[ib] += g[sz(o)] * dfb(x, y);
                                  });
                                });
}

template <class T, class Fwd, class Deriv>
Tensor<T> unary_op(std::string_view kind, const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  std::transform(xv.begin(), xv.end(), out.begin(), fwd);
  return Tensor<T>::make_result(kind, x.shape(), std::move(out), {x},
                                [x, deriv](std::span<const T> y, std::span<const T> g, std::span<T* const> gin) {
                                  const auto xv = x.data();
                                  T* gx = gin[0];
                                  for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], y[i]);
                                });
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const int rank = std::max(a.rank(), b.rank());
  std::vector<int> out(sz(rank));
  for (int i = 0; i < rank; ++i) {
    const int ia = a.rank() - rank + i;
    const int ib = b.rank() - rank + i;
    const int ea = ia >= 0 ? a[ia] : 1;
    const int eb = ib >= 0 ? b[ib] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError("cannot broadcast " + a.str() + " with " + b.str());
    }
    out[sz(i)] = (ea == 1) ? eb : ea;
  }
  return Shape(std::span<const int>(out));
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <class T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift) {
  return unary_op<T>(
      "affine", x, [scale, shift](T v) { return scale * v + shift; }, [scale](T, T) { return scale; });
}

template <class T>
Tensor<T> clamp_min(const Tensor<T>& x, T lo) {
  return unary_op<T>(
      "clamp_min", x, [lo](T v) { return v > lo ? v : lo; }, [lo](T v, T) { return v > lo ? T(1) : T(0); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary_op<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary_op<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary_op<T>(
      "tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: expects rank-2 operands, got " + a.shape().str() + " and " +
                                              b.shape().str());
  require(a.dim(1) == b.dim(0), "matmul: inner extents differ in " + a.shape().str() + " x " + b.shape().str());
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(sz(std::int64_t(m) * n));
  MapMat<T>(out.data(), m, n).noalias() = MapConstMat<T>(a.data().data(), m, k) * MapConstMat<T>(b.data().data(), k, n);
  return Tensor<T>::make_result("matmul", Shape{m, n}, std::move(out), {a, b},
                                [a, b, m, k, n](std::span<const T>, std::span<const T> g, std::span<T* const> gin) {
                                  MapConstMat<T> G(g.data(), m, n);
                                  if (gin[0]) {
                                    MapMat<T>(gin[0], m, k).noalias() +=
                                        G * MapConstMat<T>(b.data().data(), k, n).transpose();
                                  }
                                  if (gin[1]) {
                                    MapMat<T>(gin[1], k, n).noalias() +=
                                        MapConstMat<T>(a.data().data(), m, k).transpose() * G;
                                  }
                                });
}

template <class T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1),
          "bmm: incompatible operands " + a.shape().str() + " and " + b.shape().str());
  const int batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<T> out(sz(std::int64_t(batch) * m * n));
  for (int i = 0; i < batch; ++i) {
    MapMat<T>(out.data() + std::int64_t(i) * m * n, m, n).noalias() =
        MapConstMat<T>(a.data().data() + std::int64_t(i) * m * k, m, k) *
        MapConstMat<T>(b.data().data() + std::int64_t(i) * k * n, k, n);
  }
  return Tensor<T>::make_result(
      "bmm", Shape{batch, m, n}, std::move(out), {a, b},
      [a, b, batch, m, k, n](std::span<const T>, std::span<const T> g, std::span<T* const> gin) {
        for (int i = 0; i < batch; ++i) {
          MapConstMat<T> G(g.data() + std::int64_t(i) * m * n, m, n);
          if (gin[0]) {
            MapMat<T>(gin[0] + std::int64_t(i) * m * k, m, k).noalias() +=
                G * MapConstMat<T>(b.data().data() + std::int64_t(i) * k * n, k, n).transpose();
          }
          if (gin[1]) {
            MapMat<T>(gin[1] + std::int64_t(i) * k * n, k, n).noalias() +=
                MapConstMat<T>(a.data().data() + std::int64_t(i) * m * k, m, k).transpose() * G;
          }
        }
      });
}

namespace {

struct ConvGeometry {
  int n, cin, h, w, cout, kh, kw, stride, pad, oh, ow;
  std::int64_t patch() const { return std::int64_t(cin) * kh * kw; }
  std::int64_t pixels() const { return std::int64_t(oh) * ow; }
};

template <class T>
void im2col(const ConvGeometry& g, const T* x, T* cols) {
  const std::int64_t P = g.pixels();
  for (int c = 0; c < g.cin; ++c) {
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        T* row = cols + ((std::int64_t(c) * g.kh + ki) * g.kw + kj) * P;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          T* dst = row + std::int64_t(oy) * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.ow, T(0));
            continue;
          }
          const T* src = x + (std::int64_t(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const ConvGeometry& g, const T* cols, T* x) {
  const std::int64_t P = g.pixels();
  for (int c = 0; c < g.cin; ++c) {
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        const T* row = cols + ((std::int64_t(c) * g.kh + ki) * g.kw + kj) * P;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.h) continue;
          const T* src = row + std::int64_t(oy) * g.ow;
          T* dst = x + (std::int64_t(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, int stride, int pad) {
  require(input.rank() == 4 && kernel.rank() == 4,
          "conv2d: expects [N,C,H,W] input and [O,C,kh,kw] kernel, got " + input.shape().str() + " and " +
              kernel.shape().str());
  require(stride >= 1 && pad >= 0, "conv2d: stride must be >= 1 and pad >= 0");
  require(input.dim(1) == kernel.dim(1), "conv2d: channel mismatch " + input.shape().str() + " vs " +
                                             kernel.shape().str());
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0), kernel.dim(2),
                 kernel.dim(3), stride, pad, 0, 0};
  require(g.kh <= g.h + 2 * pad && g.kw <= g.w + 2 * pad,
          "conv2d: kernel " + kernel.shape().str() + " larger than padded input " + input.shape().str());
  g.oh = (g.h + 2 * pad - g.kh) / stride + 1;
  g.ow = (g.w + 2 * pad - g.kw) / stride + 1;

  const std::int64_t K = g.patch(), P = g.pixels();
  const std::int64_t in_stride = std::int64_t(g.cin) * g.h * g.w;
  const std::int64_t out_stride = std::int64_t(g.cout) * P;
  std::vector<T> out(sz(g.n * out_stride));
  std::vector<T> cols(sz(K * P));
  MapConstMat<T> W(kernel.data().data(), g.cout, K);
  for (int i = 0; i < g.n; ++i) {
    im2col(g, input.data().data() + i * in_stride, cols.data());
    MapMat<T>(out.data() + i * out_stride, g.cout, P).noalias() = W * MapConstMat<T>(cols.data(), K, P);
  }
  return Tensor<T>::make_result(
      "conv2d", Shape{g.n, g.cout, g.oh, g.ow}, std::move(out), {input, kernel},
      [input, kernel, g](std::span<const T>, std::span<const T> gout, std::span<T* const> gin) {
        const std::int64_t K = g.patch(), P = g.pixels();
        const std::int64_t in_stride = std::int64_t(g.cin) * g.h * g.w;
        const std::int64_t out_stride = std::int64_t(g.cout) * P;
        std::vector<T> cols(sz(K * P));
        std::vector<T> dcols(gin[0] ? sz(K * P) : 0);
        MapConstMat<T> W(kernel.data().data(), g.cout, K);
        for (int i = 0; i < g.n; ++i) {
          MapConstMat<T> G(gout.data() + i * out_stride, g.cout, P);
          if (gin[1]) {
            im2col(g, input.data().data() + i * in_stride, cols.data());
            MapMat<T>(gin[1], g.cout, K).noalias() += G * MapConstMat<T>(cols.data(), K, P).transpose();
          }
          if (gin[0]) {
            MapMat<T>(dcols.data(), K, P).noalias() = W.transpose() * G;
            col2im_add(g, dcols.data(), gin[0] + i * in_stride);
          }
        }
      });
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  axis = normalize_axis(axis, x.rank(), "softmax");
  const AxisSplit s = split_axis(x.shape(), axis);
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t in = 0; in < s.inner; ++in) {
      const std::int64_t base = o * s.extent * s.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < s.extent; ++j) mx = std::max(mx, xv[sz(base + j * s.inner)]);
      T total = 0;
      for (int j = 0; j < s.extent; ++j) {
        const T e = std::exp(xv[sz(base + j * s.inner)] - mx);
        out[sz(base + j * s.inner)] = e;
        total += e;
      }
      for (int j = 0; j < s.extent; ++j) out[sz(base + j * s.inner)] /= total;
    }
  }
  return Tensor<T>::make_result("softmax", x.shape(), std::move(out), {x},
                                [s](std::span<const T> y, std::span<const T> g, std::span<T* const> gin) {
                                  for (std::int64_t o = 0; o < s.outer; ++o) {
                                    for (std::int64_t in = 0; in < s.inner; ++in) {
                                      const std::int64_t base = o * s.extent * s.inner + in;
                                      T dot = 0;
                                      for (int j = 0; j < s.extent; ++j) {
                                        const auto k = sz(base + j * s.inner);
                                        dot += g[k] * y[k];
                                      }
                                      for (int j = 0; j < s.extent; ++j) {
                                        const auto k = sz(base + j * s.inner);
                                        gin[0][k] += y[k] * (g[k] - dot);
                                      }
                                    }
                                  }
                                });
}

namespace {

struct Bin {
  int begin, end;
};

std::vector<Bin> adaptive_bins(int in, int out) {
  std::vector<Bin> bins(sz(out));
  for (int i = 0; i < out; ++i) {
    bins[sz(i)].begin = static_cast<int>((std::int64_t(i) * in) / out);
    bins[sz(i)].end = static_cast<int>((std::int64_t(i + 1) * in + out - 1) / out);
  }
  return bins;
}

}  // namespace

template <class T>
Tensor<T> adaptive_avg_pool2d(const Tensor<T>& x, int out_h, int out_w) {
  require(x.rank() == 4, "adaptive_avg_pool2d: expects [N,C,H,W], got " + x.shape().str());
  require(out_h >= 1 && out_w >= 1, "adaptive_avg_pool2d: output extents must be >= 1");
  const int planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  require(h >= 1 && w >= 1, "adaptive_avg_pool2d: empty input");
  const auto by = adaptive_bins(h, out_h);
  const auto bx = adaptive_bins(w, out_w);
  const auto xv = x.data();
  std::vector<T> out(sz(std::int64_t(planes) * out_h * out_w));
  for (int p = 0; p < planes; ++p) {
    const T* src = xv.data() + std::int64_t(p) * h * w;
    for (int i = 0; i < out_h; ++i) {
      for (int j = 0; j < out_w; ++j) {
        T acc = 0;
        for (int y = by[sz(i)].begin; y < by[sz(i)].end; ++y) {
          for (int xx = bx[sz(j)].begin; xx < bx[sz(j)].end; ++xx) acc += src[std::int64_t(y) * w + xx];
        }
        const int count = (by[sz(i)].end - by[sz(i)].begin) * (bx[sz(j)].end - bx[sz(j)].begin);
        out[sz((std::int64_t(p) * out_h + i) * out_w + j)] = acc / T(count);
      }
    }
  }
  return Tensor<T>::make_result(
      "adaptive_avg_pool2d", Shape{x.dim(0), x.dim(1), out_h, out_w}, std::move(out), {x},
      [planes, h, w, out_h, out_w, by, bx](std::span<const T>, std::span<const T> g, std::span<T* const> gin) {
        for (int p = 0; p < planes; ++p) {
          T* dst = gin[0] + std::int64_t(p) * h * w;
          for (int i = 0; i < out_h; ++i) {
            for (int j = 0; j < out_w; ++j) {
              const int count = (by[sz(i)].end - by[sz(i)].begin) * (bx[sz(j)].end - bx[sz(j)].begin);
              const T share = g[sz((std::int64_t(p) * out_h + i) * out_w + j)] / T(count);
              for (int y = by[sz(i)].begin; y < by[sz(i)].end; ++y) {
                for (int xx = bx[sz(j)].begin; xx < bx[sz(j)].end; ++xx) dst[std::int64_t(y) * w + xx] += share;
              }
            }
          }
        }
      });
}

template <class T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int factor) {
  require(x.rank() == 4, "upsample_nearest: expects [N,C,H,W], got " + x.shape().str());
  require(factor >= 1, "upsample_nearest: factor must be >= 1");
  const int planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = h * factor, ow = w * factor;
  const auto xv = x.data();
  std::vector<T> out(sz(std::int64_t(planes) * oh * ow));
  for (int p = 0; p < planes; ++p) {
    for (int y = 0; y < oh; ++y) {
      const T* src = xv.data() + (std::int64_t(p) * h + y / factor) * w;
      T* dst = out.data() + (std::int64_t(p) * oh + y) * ow;
      for (int xx = 0; xx < ow; ++xx) dst[xx] = src[xx / factor];
    }
  }
  return Tensor<T>::make_result("upsample_nearest", Shape{x.dim(0), x.dim(1), oh, ow}, std::move(out), {x},
                                [planes, h, w, factor](std::span<const T>, std::span<const T> g, std::span<T* const> gin) {
                                  const int oh = h * factor, ow = w * factor;
                                  for (int p = 0; p < planes; ++p) {
                                    for (int y = 0; y < oh; ++y) {
                                      T* dst = gin[0] + (std::int64_t(p) * h + y / factor) * w;
                                      const T* src = g.data() + (std::int64_t(p) * oh + y) * ow;
                                      for (int xx = 0; xx < ow; ++xx) dst[xx / factor] += src[xx];
                                    }
                                  }
                                });
}

template <class T>
Tensor<T> concat(std::span<const Tensor<T>> parts, int axis) {
  require(!parts.empty(), "concat: no parts");
  const Shape& first = parts[0].shape();
  axis = normalize_axis(axis, first.rank(), "concat");
  Shape out_shape = first;
  int total = 0;
  for (const auto& p : parts) {
    require(p.rank() == first.rank(), "concat: rank mismatch");
    for (int i = 0; i < first.rank(); ++i) {
      if (i != axis) {
        require(p.dim(i) == first[i], "concat: extents disagree: " + p.shape().str() + " vs " + first.str());
      }
    }
    total += p.dim(axis);
  }
  out_shape[axis] = total;
  const AxisSplit s = split_axis(out_shape, axis);
  std::vector<T> out(sz(out_shape.numel()));
  std::vector<int> offsets;
  int offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::int64_t block = std::int64_t(p.dim(axis)) * s.inner;
    const auto pv = p.data();
    for (std::int64_t o = 0; o < s.outer; ++o) {
      std::copy_n(pv.data() + o * block, block, out.data() + o * s.extent * s.inner + std::int64_t(offset) * s.inner);
    }
    offset += p.dim(axis);
  }
  std::vector<int> widths;
  for (const auto& p : parts) widths.push_back(p.dim(axis));
  return Tensor<T>::make_result("concat", out_shape, std::move(out), parts,
                                [s, offsets, widths](std::span<const T>, std::span<const T> g, std::span<T* const> gin) {
                                  for (std::size_t k = 0; k < gin.size(); ++k) {
                                    if (!gin[k]) continue;
                                    const std::int64_t block = std::int64_t(widths[k]) * s.inner;
                                    for (std::int64_t o = 0; o < s.outer; ++o) {
                                      const T* src = g.data() + o * s.extent * s.inner + std::int64_t(offsets[k]) * s.inner;
                                      T* dst = gin[k] + o * block;
                                      for (std::int64_t i = 0; i < block; ++i) dst[i] += src[i];
                                    }
                                  }
                                });
}

template <class T>
BatchNormStats<T>::BatchNormStats(int channels)
    : running_mean(Tensor<T>::zeros(Shape{channels})), running_var(Tensor<T>::full(Shape{channels}, T(1))) {}

namespace {

struct NormLayout {
  int n, c;
  std::int64_t inner;
  std::int64_t count() const { return std::int64_t(n) * inner; }
};

template <class T>
NormLayout norm_layout(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, const BatchNormStats<T>& stats) {
  require(x.rank() == 2 || x.rank() == 4, "batch_norm: expects [N,C] or [N,C,H,W], got " + x.shape().str());
  NormLayout l{x.dim(0), x.dim(1), x.rank() == 4 ? std::int64_t(x.dim(2)) * x.dim(3) : 1};
  require(gamma.numel() == l.c && beta.numel() == l.c && stats.running_mean.numel() == l.c &&
              stats.running_var.numel() == l.c,
          "batch_norm: parameter extents do not match " + std::to_string(l.c) + " channels");
  return l;
}

template <class T>
Tensor<T> batch_norm_eval(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          const BatchNormStats<T>& stats, const NormLayout& l) {
  const auto xv = x.data();
  std::vector<T> inv_std(sz(l.c)), mu(sz(l.c));
  for (int ch = 0; ch < l.c; ++ch) {
    mu[sz(ch)] = stats.running_mean.data()[sz(ch)];
    inv_std[sz(ch)] = T(1) / std::sqrt(stats.running_var.data()[sz(ch)] + stats.eps);
  }
  std::vector<T> out(xv.size());
  for (int i = 0; i < l.n; ++i) {
    for (int ch = 0; ch < l.c; ++ch) {
      const std::int64_t base = (std::int64_t(i) * l.c + ch) * l.inner;
      const T gm = gamma.data()[sz(ch)], bt = beta.data()[sz(ch)];
      for (std::int64_t k = 0; k < l.inner; ++k) {
        out[sz(base + k)] = gm * (xv[sz(base + k)] - mu[sz(ch)]) * inv_std[sz(ch)] + bt;
      }
    }
  }
  return Tensor<T>::make_result(
      "batch_norm", x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, l, mu, inv_std](std::span<const T>, std::span<const T> g, std::span<T* const> gin) {
        const auto xv = x.data();
        for (int i = 0; i < l.n; ++i) {
          for (int ch = 0; ch < l.c; ++ch) {
            const std::int64_t base = (std::int64_t(i) * l.c + ch) * l.inner;
            const T gm = gamma.data()[sz(ch)];
            for (std::int64_t k = 0; k < l.inner; ++k) {
              const T gk = g[sz(base + k)];
              const T xhat = (xv[sz(base + k)] - mu[sz(ch)]) * inv_std[sz(ch)];
              if (gin[0]) gin[0][base + k] += gk * gm * inv_std[sz(ch)];
              if (gin[1]) gin[1][ch] += gk * xhat;
              if (gin[2]) gin[2][ch] += gk;
            }
          }
        }
      });
}

}  // namespace

template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, const BatchNormStats<T>& stats) {
  return batch_norm_eval(x, gamma, beta, stats, norm_layout(x, gamma, beta, stats));
}

template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormStats<T>& stats,
                     bool training) {
  const NormLayout l = norm_layout(x, gamma, beta, stats);
  if (!training) return batch_norm_eval(x, gamma, beta, stats, l);
  require(l.count() > 1, "batch_norm: training mode needs more than one value per channel");

  const auto xv = x.data();
  std::vector<T> mu(sz(l.c), T(0)), var(sz(l.c), T(0)), inv_std(sz(l.c));
  for (int i = 0; i < l.n; ++i) {
    for (int ch = 0; ch < l.c; ++ch) {
      const std::int64_t base = (std::int64_t(i) * l.c + ch) * l.inner;
      for (std::int64_t k = 0; k < l.inner; ++k) mu[sz(ch)] += xv[sz(base + k)];
    }
  }
  for (auto& m : mu) m /= T(l.count());
  for (int i = 0; i < l.n; ++i) {
    for (int ch = 0; ch < l.c; ++ch) {
      const std::int64_t base = (std::int64_t(i) * l.c + ch) * l.inner;
      for (std::int64_t k = 0; k < l.inner; ++k) {
        const T d = xv[sz(base + k)] - mu[sz(ch)];
        var[sz(ch)] += d * d;
      }
    }
  }
  for (auto& v : var) v /= T(l.count());
  for (int ch = 0; ch < l.c; ++ch) inv_std[sz(ch)] = T(1) / std::sqrt(var[sz(ch)] + stats.eps);

  {
    auto rm = stats.running_mean.mutable_data();
    auto rv = stats.running_var.mutable_data();
    const T unbias = T(l.count()) / T(l.count() - 1);
    for (int ch = 0; ch < l.c; ++ch) {
      rm[sz(ch)] = (T(1) - stats.momentum) * rm[sz(ch)] + stats.momentum * mu[sz(ch)];
      rv[sz(ch)] = (T(1) - stats.momentum) * rv[sz(ch)] + stats.momentum * var[sz(ch)] * unbias;
    }
  }

  std::vector<T> xhat(xv.size()), out(xv.size());
  for (int i = 0; i < l.n; ++i) {
    for (int ch = 0; ch < l.c; ++ch) {
      const std::int64_t base = (std::int64_t(i) * l.c + ch) * l.inner;
      const T gm = gamma.data()[sz(ch)], bt = beta.data()[sz(ch)];
      for (std::int64_t k = 0; k < l.inner; ++k) {
        const T h = (xv[sz(base + k)] - mu[sz(ch)]) * inv_std[sz(ch)];
        xhat[sz(base + k)] = h;
        out[sz(base + k)] = gm * h + bt;
      }
    }
  }
  return Tensor<T>::make_result(
      "batch_norm", x.shape(), std::move(out), {x, gamma, beta},
      [gamma, l, xhat = std::move(xhat), inv_std](std::span<const T>, std::span<const T> g, std::span<T* const> gin) {
        std::vector<T> gsum(sz(l.c), T(0)), gxhat(sz(l.c), T(0));
        for (int i = 0; i < l.n; ++i) {
          for (int ch = 0; ch < l.c; ++ch) {
            const std::int64_t base = (std::int64_t(i) * l.c + ch) * l.inner;
            for (std::int64_t k = 0; k < l.inner; ++k) {
              gsum[sz(ch)] += g[sz(base + k)];
              gxhat[sz(ch)] += g[sz(base + k)] * xhat[sz(base + k)];
            }
          }
        }
        for (int ch = 0; ch < l.c; ++ch) {
          if (gin[1]) gin[1][ch] += gxhat[sz(ch)];
          if (gin[2]) gin[2][ch] += gsum[sz(ch)];
        }
        if (!gin[0]) return;
        const T inv_count = T(1) / T(l.count());
        for (int i = 0; i < l.n; ++i) {
          for (int ch = 0; ch < l.c; ++ch) {
            const std::int64_t base = (std::int64_t(i) * l.c + ch) * l.inner;
            const T scale = gamma.data()[sz(ch)] * inv_std[sz(ch)];
            const T mg = gsum[sz(ch)] * inv_count, mgx = gxhat[sz(ch)] * inv_count;
            for (std::int64_t k = 0; k < l.inner; ++k) {
              gin[0][base + k] += scale * (g[sz(base + k)] - mg - xhat[sz(base + k)] * mgx);
            }
          }
        }
      });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
  require(shape.numel() == x.numel(), "reshape: " + x.shape().str() + " -> " + shape.str() + " changes element count");
  std::vector<T> out(x.data().begin(), x.data().end());
  return Tensor<T>::make_result("reshape", shape, std::move(out), {x},
                                [](std::span<const T>, std::span<const T> g, std::span<T* const> gin) {
                                  for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                                });
}

template <class T>
Tensor<T> permute(const Tensor<T>& x, std::span<const int> order) {
  const int rank = x.rank();
  require(static_cast<int>(order.size()) == rank, "permute: order length must equal rank");
  std::array<bool, 4> used{};
  std::vector<int> out_ext(sz(rank));
  for (int i = 0; i < rank; ++i) {
    const int a = order[sz(i)];
    require(a >= 0 && a < rank && !used[sz(a)], "permute: invalid axis order");
    used[sz(a)] = true;
    out_ext[sz(i)] = x.dim(a);
  }
  const Shape out_shape = Shape(std::span<const int>(out_ext));
  // Input stride of each output axis, padded to rank 4.
  std::array<std::int64_t, 4> in_stride{};
  {
    std::array<std::int64_t, 4> st{};
    std::int64_t acc = 1;
    for (int i = rank - 1; i >= 0; --i) {
      st[sz(i)] = acc;
      acc *= x.dim(i);
    }
    for (int i = 0; i < rank; ++i) in_stride[sz(4 - rank + i)] = st[sz(order[sz(i)])];
  }
  const auto oe = pad4(out_shape);
  std::vector<std::int64_t> index(sz(x.numel()));
  std::int64_t o = 0;
  for (int i0 = 0; i0 < oe[0]; ++i0)
    for (int i1 = 0; i1 < oe[1]; ++i1)
      for (int i2 = 0; i2 < oe[2]; ++i2)
        for (int i3 = 0; i3 < oe[3]; ++i3)
          index[sz(o++)] = i0 * in_stride[0] + i1 * in_stride[1] + i2 * in_stride[2] + i3 * in_stride[3];
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[sz(index[i])];
  return Tensor<T>::make_result("permute", out_shape, std::move(out), {x},
                                [index = std::move(index)](std::span<const T>, std::span<const T> g, std::span<T* const> gin) {
                                  for (std::size_t i = 0; i < g.size(); ++i) gin[0][index[i]] += g[i];
                                });
}

template <class T>
Tensor<T> slice(const Tensor<T>& x, int axis, int start, int length) {
  axis = normalize_axis(axis, x.rank(), "slice");
  require(start >= 0 && length >= 0 && start + length <= x.dim(axis), "slice: range out of bounds for " + x.shape().str());
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const std::int64_t block = std::int64_t(length) * s.inner;
  const auto xv = x.data();
  std::vector<T> out(sz(s.outer * block));
  for (std::int64_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.data() + o * s.extent * s.inner + std::int64_t(start) * s.inner, block, out.data() + o * block);
  }
  return Tensor<T>::make_result("slice", out_shape, std::move(out), {x},
                                [s, start, block](std::span<const T>, std::span<const T> g, std::span<T* const> gin) {
                                  for (std::int64_t o = 0; o < s.outer; ++o) {
                                    T* dst = gin[0] + o * s.extent * s.inner + std::int64_t(start) * s.inner;
                                    const T* src = g.data() + o * block;
                                    for (std::int64_t i = 0; i < block; ++i) dst[i] += src[i];
                                  }
                                });
}

template <class T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids) {
  require(table.rank() == 2, "embedding: table must be [V,m], got " + table.shape().str());
  const int vocab = table.dim(0), width = table.dim(1);
  std::vector<int> rows(ids.begin(), ids.end());
  for (int id : rows) {
    if (id < 0 || id >= vocab) throw std::out_of_range("embedding: id " + std::to_string(id) + " outside [0," +
                                                       std::to_string(vocab) + ")");
  }
  std::vector<T> out(rows.size() * sz(width));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(table.data().data() + std::int64_t(rows[r]) * width, width, out.data() + r * sz(width));
  }
  return Tensor<T>::make_result("embedding", Shape{static_cast<int>(rows.size()), width}, std::move(out), {table},
                                [rows, width](std::span<const T>, std::span<const T> g, std::span<T* const> gin) {
                                  for (std::size_t r = 0; r < rows.size(); ++r) {
                                    T* dst = gin[0] + std::int64_t(rows[r]) * width;
                                    const T* src = g.data() + r * sz(width);
                                    for (int k = 0; k < width; ++k) dst[k] += src[k];
                                  }
                                });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  const auto xv = x.data();
  const T total = std::accumulate(xv.begin(), xv.end(), T(0));
  const std::size_t len = xv.size();
  return Tensor<T>::make_result("sum", Shape{}, {total}, {x},
                                [len](std::span<const T>, std::span<const T> g, std::span<T* const> gin) {
                                  for (std::size_t i = 0; i < len; ++i) gin[0][i] += g[0];
                                });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  const auto xv = x.data();
  const T n = T(xv.size());
  const T total = std::accumulate(xv.begin(), xv.end(), T(0));
  const std::size_t len = xv.size();
  return Tensor<T>::make_result("mean", Shape{}, {total / n}, {x},
                                [len, n](std::span<const T>, std::span<const T> g, std::span<T* const> gin) {
                                  for (std::size_t i = 0; i < len; ++i) gin[0][i] += g[0] / n;
                                });
}

template <class T>
Tensor<T> mean_axis(const Tensor<T>& x, int axis) {
  axis = normalize_axis(axis, x.rank(), "mean_axis");
  const AxisSplit s = split_axis(x.shape(), axis);
  std::vector<int> ext;
  for (int i = 0; i < x.rank(); ++i) {
    if (i != axis) ext.push_back(x.dim(i));
  }
  const auto xv = x.data();
  std::vector<T> out(sz(s.outer * s.inner), T(0));
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (int j = 0; j < s.extent; ++j)
      for (std::int64_t in = 0; in < s.inner; ++in) out[sz(o * s.inner + in)] += xv[sz((o * s.extent + j) * s.inner + in)];
  for (auto& v : out) v /= T(s.extent);
  return Tensor<T>::make_result("mean_axis", Shape(std::span<const int>(ext)), std::move(out), {x},
                                [s](std::span<const T>, std::span<const T> g, std::span<T* const> gin) {
                                  const T inv = T(1) / T(s.extent);
                                  for (std::int64_t o = 0; o < s.outer; ++o)
                                    for (int j = 0; j < s.extent; ++j)
                                      for (std::int64_t in = 0; in < s.inner; ++in)
                                        gin[0][(o * s.extent + j) * s.inner + in] += g[sz(o * s.inner + in)] * inv;
                                });
}

template <class T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require(pred.shape() == target.shape(), "mse_loss: shape mismatch " + pred.shape().str() + " vs " + target.shape().str());
  const auto p = pred.data();
  const auto t = target.data();
  T acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T d = p[i] - t[i];
    acc += d * d;
  }
  const T n = T(p.size());
  return Tensor<T>::make_result("mse_loss", Shape{}, {acc / n}, {pred, target},
                                [pred, target, n](std::span<const T>, std::span<const T> g, std::span<T* const> gin) {
                                  const auto p = pred.data();
                                  const auto t = target.data();
                                  const T scale = T(2) * g[0] / n;
                                  for (std::size_t i = 0; i < p.size(); ++i) {
                                    const T d = scale * (p[i] - t[i]);
                                    if (gin[0]) gin[0][i] += d;
                                    if (gin[1]) gin[1][i] -= d;
                                  }
                                });
}

template <class T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require(pred.shape() == target.shape(), "l1_loss: shape mismatch " + pred.shape().str() + " vs " + target.shape().str());
  const auto p = pred.data();
  const auto t = target.data();
  T acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - t[i]);
  const T n = T(p.size());
  return Tensor<T>::make_result("l1_loss", Shape{}, {acc / n}, {pred, target},
                                [pred, target, n](std::span<const T>, std::span<const T> g, std::span<T* const> gin) {
                                  const auto p = pred.data();
                                  const auto t = target.data();
                                  const T scale = g[0] / n;
                                  for (std::size_t i = 0; i < p.size(); ++i) {
                                    const T d = p[i] - t[i];
                                    const T s = d > T(0) ? scale : (d < T(0) ? -scale : T(0));
                                    if (gin[0]) gin[0][i] += s;
                                    if (gin[1]) gin[1][i] -= s;
                                  }
                                });
}

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets, int ignore_id) {
  require(logits.rank() == 2, "cross_entropy: logits must be [N,V], got " + logits.shape().str());
  const int rows = logits.dim(0), vocab = logits.dim(1);
  require(static_cast<int>(targets.size()) == rows, "cross_entropy: " + std::to_string(targets.size()) +
                                                        " targets for " + std::to_string(rows) + " rows");
  const auto lv = logits.data();
  std::vector<T> probs(lv.size());
  std::vector<int> tgt(targets.begin(), targets.end());
  T total = 0;
  int counted = 0;
  for (int r = 0; r < rows; ++r) {
    const T* row = lv.data() + std::int64_t(r) * vocab;
    T* pr = probs.data() + std::int64_t(r) * vocab;
    const T mx = *std::max_element(row, row + vocab);
    T z = 0;
    for (int v = 0; v < vocab; ++v) z += std::exp(row[v] - mx);
    for (int v = 0; v < vocab; ++v) pr[v] = std::exp(row[v] - mx) / z;
    if (tgt[sz(r)] == ignore_id) continue;
    if (tgt[sz(r)] < 0 || tgt[sz(r)] >= vocab) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(tgt[sz(r)]) + " outside vocabulary");
    }
    total += -(row[tgt[sz(r)]] - mx - std::log(z));
    ++counted;
  }
  const T denom = counted > 0 ? T(counted) : T(1);
  return Tensor<T>::make_result(
      "cross_entropy", Shape{}, {total / denom}, {logits},
      [probs = std::move(probs), tgt, vocab, ignore_id, denom](std::span<const T>, std::span<const T> g, std::span<T* const> gin) {
        const T scale = g[0] / denom;
        for (std::size_t r = 0; r < tgt.size(); ++r) {
          if (tgt[r] == ignore_id) continue;
          const T* pr = probs.data() + r * sz(vocab);
          T* dst = gin[0] + r * sz(vocab);
          for (int v = 0; v < vocab; ++v) dst[v] += scale * pr[v];
          dst[tgt[r]] -= scale;
        }
      });
}

#define RAINCAP_INSTANTIATE_OPS(T)                                                                            \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> affine(const Tensor<T>&, T, T);                                                         \
  template Tensor<T> clamp_min(const Tensor<T>&, T);                                                         \
  template Tensor<T> relu(const Tensor<T>&);                                                                 \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                              \
  template Tensor<T> tanh(const Tensor<T>&);                                                                 \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, int, int);                                   \
  template Tensor<T> softmax(const Tensor<T>&, int);                                                         \
  template Tensor<T> adaptive_avg_pool2d(const Tensor<T>&, int, int);                                        \
  template Tensor<T> upsample_nearest(const Tensor<T>&, int);                                                \
  template Tensor<T> concat(std::span<const Tensor<T>>, int);                                                \
  template struct BatchNormStats<T>;                                                                         \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, BatchNormStats<T>&, bool); \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const BatchNormStats<T>&); \
  template Tensor<T> reshape(const Tensor<T>&, const Shape&);                                                \
  template Tensor<T> permute(const Tensor<T>&, std::span<const int>);                                        \
  template Tensor<T> slice(const Tensor<T>&, int, int, int);                                                 \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const int>);                                      \
  template Tensor<T> sum(const Tensor<T>&);                                                                  \
  template Tensor<T> mean(const Tensor<T>&);                                                                 \
  template Tensor<T> mean_axis(const Tensor<T>&, int);                                                       \
  template Tensor<T> mse_loss(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> l1_loss(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>, int);

RAINCAP_INSTANTIATE_OPS(float)
RAINCAP_INSTANTIATE_OPS(double)

}  // namespace raincap::grad
