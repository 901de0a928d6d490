#include "raincap/grad/op_suite.hpp"

#include <cmath>
#include <random>

#include "raincap/grad/ops.hpp"

namespace raincap::grad {

namespace {

using TD = Tensor<double>;

class Inputs {
 public:
  explicit Inputs(std::uint64_t seed) : rng_(seed) {}

  TD normal(const Shape& s) {
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> v(static_cast<std::size_t>(s.numel()));
    for (auto& x : v) x = d(rng_);
    return TD::from_data(s, std::move(v), true);
  }

  // Values with |x| in [lo, hi] and random sign, away from kinks at zero.
  TD away_from_zero(const Shape& s, double lo = 0.1, double hi = 1.5) {
    std::uniform_real_distribution<double> mag(lo, hi);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> v(static_cast<std::size_t>(s.numel()));
    for (auto& x : v) x = sign(rng_) ? mag(rng_) : -mag(rng_);
    return TD::from_data(s, std::move(v), true);
  }

  TD positive(const Shape& s, double lo = 0.5, double hi = 2.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(static_cast<std::size_t>(s.numel()));
    for (auto& x : v) x = d(rng_);
    return TD::from_data(s, std::move(v), true);
  }

  // Random projection so every output entry carries a distinct weight.
  TD project(const TD& out) {
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> v(static_cast<std::size_t>(out.numel()));
    for (auto& x : v) x = d(rng_);
    return sum(mul(out, TD::from_data(out.shape(), std::move(v))));
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

template <class Build>
GradCheckCase make_case(std::string name, Build build) {
  return {std::move(name), [build](std::uint64_t seed) {
            Inputs in(seed);
            std::vector<TD> wrt;
            std::function<TD()> loss = build(in, wrt);
            return check_gradients(loss, wrt, GradCheckOptions{1e-5, 0, seed, 1e-6});
          }};
}

template <class Op>
GradCheckCase binary(std::string name, Shape sa, Shape sb, Op op, bool positive_rhs = false) {
  return make_case(std::move(name), [=](Inputs& in, std::vector<TD>& wrt) {
    TD a = in.normal(sa);
    TD b = positive_rhs ? in.positive(sb) : in.normal(sb);
    wrt = {a, b};
    TD w = in.normal(broadcast_shape(sa, sb)).detach();
    return std::function<TD()>([=] { return sum(mul(op(a, b), w)); });
  });
}

template <class Op>
GradCheckCase unary(std::string name, Shape s, Op op, bool avoid_zero = false) {
  return make_case(std::move(name), [=](Inputs& in, std::vector<TD>& wrt) {
    TD x = avoid_zero ? in.away_from_zero(s) : in.normal(s);
    wrt = {x};
    TD w = in.normal(op(x.detach()).shape()).detach();
    return std::function<TD()>([=] { return sum(mul(op(x), w)); });
  });
}

}  // namespace

std::vector<GradCheckCase> primitive_gradcheck_cases() {
  std::vector<GradCheckCase> cases;
  cases.push_back(binary("add", {2, 3}, {2, 3}, [](const TD& a, const TD& b) { return add(a, b); }));
  cases.push_back(binary("add/per-channel", {2, 3, 2, 2}, {1, 3, 1, 1}, [](const TD& a, const TD& b) { return add(a, b); }));
  cases.push_back(binary("sub/scalar", {2, 3}, {}, [](const TD& a, const TD& b) { return sub(a, b); }));
  cases.push_back(binary("mul", {2, 3}, {2, 3}, [](const TD& a, const TD& b) { return mul(a, b); }));
  cases.push_back(
      binary("mul/channel-spread", {2, 1, 3, 3}, {2, 3, 3, 3}, [](const TD& a, const TD& b) { return mul(a, b); }));
  cases.push_back(binary("div", {2, 3, 2, 2}, {2, 1, 2, 2}, [](const TD& a, const TD& b) { return div(a, b); }, true));
  cases.push_back(unary("affine", {3, 4}, [](const TD& x) { return affine(x, 1.7, -0.3); }));
  cases.push_back(unary("clamp_min", {3, 4}, [](const TD& x) { return clamp_min(x, 0.05); }, true));
  cases.push_back(unary("relu", {3, 4}, [](const TD& x) { return relu(x); }, true));
  cases.push_back(unary("sigmoid", {3, 4}, [](const TD& x) { return sigmoid(x); }));
  cases.push_back(unary("tanh", {3, 4}, [](const TD& x) { return tanh(x); }));
  cases.push_back(make_case("matmul", [](Inputs& in, std::vector<TD>& wrt) {
    TD a = in.normal({4, 5});
    TD b = in.normal({5, 2});
    wrt = {a, b};
    TD w = in.normal({4, 2}).detach();
    return std::function<TD()>([=] { return sum(mul(matmul(a, b), w)); });
  }));
  cases.push_back(make_case("bmm", [](Inputs& in, std::vector<TD>& wrt) {
    TD a = in.normal({2, 3, 4});
    TD b = in.normal({2, 4, 5});
    wrt = {a, b};
    TD w = in.normal({2, 3, 5}).detach();
    return std::function<TD()>([=] { return sum(mul(bmm(a, b), w)); });
  }));
  for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 1}, std::pair{1, 0}}) {
    cases.push_back(make_case("conv2d/s" + std::to_string(stride) + "p" + std::to_string(pad),
                              [stride, pad](Inputs& in, std::vector<TD>& wrt) {
                                TD x = in.normal({2, 2, 5, 5});
                                TD k = in.normal({3, 2, 3, 3});
                                wrt = {x, k};
                                TD probe = conv2d(x.detach(), k.detach(), stride, pad);
                                TD w = in.normal(probe.shape()).detach();
                                return std::function<TD()>([=] { return sum(mul(conv2d(x, k, stride, pad), w)); });
                              }));
  }
  cases.push_back(unary("softmax/axis1", {3, 5}, [](const TD& x) { return softmax(x, 1); }));
  cases.push_back(unary("softmax/axis0", {4, 3}, [](const TD& x) { return softmax(x, 0); }));
  cases.push_back(unary("adaptive_avg_pool2d", {1, 2, 5, 5}, [](const TD& x) { return adaptive_avg_pool2d(x, 2, 3); }));
  cases.push_back(unary("upsample_nearest", {1, 2, 2, 3}, [](const TD& x) { return upsample_nearest(x, 2); }));
  cases.push_back(make_case("concat", [](Inputs& in, std::vector<TD>& wrt) {
    TD a = in.normal({2, 2, 3});
    TD b = in.normal({2, 1, 3});
    wrt = {a, b};
    TD w = in.normal({2, 3, 3}).detach();
    return std::function<TD()>([=] { return sum(mul(concat({a, b}, 1), w)); });
  }));
  for (bool training : {true, false}) {
    cases.push_back(make_case(training ? "batch_norm/train" : "batch_norm/eval", [training](Inputs& in, std::vector<TD>& wrt) {
      TD x = in.normal({3, 2, 2, 2});
      TD gamma = in.positive({2});
      TD beta = in.normal({2});
      wrt = {x, gamma, beta};
      auto stats = std::make_shared<BatchNormStats<double>>(2);
      stats->running_mean.mutable_data()[0] = 0.3;
      stats->running_var.mutable_data()[1] = 1.7;
      TD w = in.normal({3, 2, 2, 2}).detach();
      return std::function<TD()>([=] { return sum(mul(batch_norm(x, gamma, beta, *stats, training), w)); });
    }));
  }
  cases.push_back(unary("reshape", {2, 6}, [](const TD& x) { return reshape(x, Shape{3, 4}); }));
  cases.push_back(unary("permute", {2, 3, 4}, [](const TD& x) { return permute(x, {2, 0, 1}); }));
  cases.push_back(unary("slice", {2, 6, 2}, [](const TD& x) { return slice(x, 1, 2, 3); }));
  cases.push_back(make_case("embedding", [](Inputs& in, std::vector<TD>& wrt) {
    TD table = in.normal({5, 3});
    wrt = {table};
    TD w = in.normal({4, 3}).detach();
    const std::vector<int> ids{3, 0, 3, 1};
    return std::function<TD()>([=] { return sum(mul(embedding(table, std::span<const int>(ids)), w)); });
  }));
  cases.push_back(unary("mean", {3, 4}, [](const TD& x) { return mul(mean(x), mean(x)); }));
  cases.push_back(unary("mean_axis", {2, 3, 4}, [](const TD& x) { return mean_axis(x, 1); }));
  cases.push_back(make_case("mse_loss", [](Inputs& in, std::vector<TD>& wrt) {
    TD p = in.normal({2, 3});
    TD t = in.normal({2, 3});
    wrt = {p, t};
    return std::function<TD()>([=] { return mse_loss(p, t); });
  }));
  cases.push_back(make_case("l1_loss", [](Inputs& in, std::vector<TD>& wrt) {
    TD p = in.away_from_zero({2, 3});
    TD t = TD::zeros({2, 3}, true);
    wrt = {p, t};
    return std::function<TD()>([=] { return l1_loss(p, t); });
  }));
  cases.push_back(make_case("cross_entropy", [](Inputs& in, std::vector<TD>& wrt) {
    TD logits = in.normal({4, 5});
    wrt = {logits};
    const std::vector<int> targets{1, 0, 4, 2};
    return std::function<TD()>([=] { return cross_entropy(logits, std::span<const int>(targets), 0); });
  }));
  return cases;
}

}  // namespace raincap::grad
