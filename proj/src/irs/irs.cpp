#include "raincap/irs/irs.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "raincap/grad/adam.hpp"

namespace raincap::irs {

using grad::Tensor;

template <class T>
UNet<T>::UNet(int in_channels, int out_channels, const Widths& w, OutputActivation act, std::mt19937_64& rng)
    : activation(act) {
  int prev = in_channels;
  for (int i = 0; i < 4; ++i) {
    down[i] = grad::Conv2d<T>(prev, w[i], 3, 2, 1, rng);
    prev = w[i];
  }
  up[0] = grad::Conv2d<T>(w[3] + w[2], w[2], 3, 1, 1, rng);
  up[1] = grad::Conv2d<T>(w[2] + w[1], w[1], 3, 1, 1, rng);
  up[2] = grad::Conv2d<T>(w[1] + w[0], w[0], 3, 1, 1, rng);
  up[3] = grad::Conv2d<T>(w[0] + in_channels, out_channels, 3, 1, 1, rng);
}

template <class T>
Tensor<T> UNet<T>::operator()(const Tensor<T>& x) const {
  require_divisible(x.dim(2), x.dim(3));
  std::array<Tensor<T>, 4> skip;
  Tensor<T> h = x;
  for (int i = 0; i < 4; ++i) {
    h = grad::relu(down[i](h));
    skip[i] = h;
  }
  h = grad::relu(up[0](grad::concat({grad::upsample_nearest(h, 2), skip[2]}, 1)));
  h = grad::relu(up[1](grad::concat({grad::upsample_nearest(h, 2), skip[1]}, 1)));
  h = grad::relu(up[2](grad::concat({grad::upsample_nearest(h, 2), skip[0]}, 1)));
  h = up[3](grad::concat({grad::upsample_nearest(h, 2), x}, 1));
  return activation == OutputActivation::sigmoid ? grad::sigmoid(h) : grad::relu(h);
}

template <class T>
void UNet<T>::collect(const std::string& prefix, grad::NamedTensors<T>& params) const {
  for (int i = 0; i < 4; ++i) down[i].collect(prefix + "down" + std::to_string(i) + ".", params);
  for (int i = 0; i < 4; ++i) up[i].collect(prefix + "up" + std::to_string(i) + ".", params);
}

template <class T>
IrsModel<T>::IrsModel(std::uint64_t seed, const Widths& widths) {
  std::mt19937_64 rng(seed);
  net_A = UNet<T>(3, 3, widths, OutputActivation::sigmoid, rng);
  net_T = UNet<T>(6, 1, widths, OutputActivation::sigmoid, rng);
  net_S = UNet<T>(3, 1, widths, OutputActivation::relu, rng);
}

template <class T>
grad::NamedTensors<T> IrsModel<T>::parameters() const {
  grad::NamedTensors<T> out;
  net_A.collect("irs.net_A.", out);
  net_T.collect("irs.net_T.", out);
  net_S.collect("irs.net_S.", out);
  return out;
}

template <class T>
Widths IrsModel<T>::widths() const {
  Widths w{};
  for (int i = 0; i < 4; ++i) w[i] = net_A.down[i].weight.dim(0);
  return w;
}

template <class T>
IrsModel<T> IrsModel<T>::clone() const {
  IrsModel<T> c(0, widths());
  auto dst = c.parameters();
  grad::copy_values(parameters(), dst);
  return c;
}

void require_divisible(int h, int w) {
  if (h <= 0 || w <= 0 || h % 16 != 0 || w % 16 != 0)
    throw grad::ShapeError("IRS input extents must be multiples of 16, got " + std::to_string(h) + "x" +
                           std::to_string(w));
}

template <class T>
IrsEstimates<T> irs_forward(const Tensor<T>& base, const Tensor<T>& detail, const IrsModel<T>& model) {
  if (!(base.shape() == detail.shape()) || base.rank() != 4 || base.dim(1) != 3)
    throw grad::ShapeError("irs_forward: base " + base.shape().str() + " and detail " + detail.shape().str() +
                           " must both be [N,3,H,W]");
  require_divisible(base.dim(2), base.dim(3));
  return {model.net_A(base), model.net_T(grad::concat({base, detail}, 1)), model.net_S(detail)};
}

template <class T>
Tensor<T> irs_loss(const IrsEstimates<T>& est, const Tensor<T>& A, const Tensor<T>& T_map, const Tensor<T>& S) {
  Tensor<T> a_full = A;
  if (!(A.shape() == est.A.shape())) {
    if (A.rank() != 4 || A.dim(0) != est.A.dim(0) || A.dim(1) != 3 || A.dim(2) != 1 || A.dim(3) != 1)
      throw grad::ShapeError("irs_loss: A target " + A.shape().str() + " does not match " + est.A.shape().str());
    a_full = grad::add(A, Tensor<T>::zeros(est.A.shape()));
  }
  return grad::add(grad::add(grad::mse_loss(est.A, a_full), grad::mse_loss(est.T_map, T_map)),
                   grad::mse_loss(est.S, S));
}

template <class T>
Tensor<T> invert_in_graph(const Tensor<T>& I, const Tensor<T>& A, const Tensor<T>& T_map, const Tensor<T>& S,
                          T t_min) {
  const Tensor<T> t = grad::clamp_min(T_map, t_min);
  const Tensor<T> veil = grad::mul(grad::affine(t, T(-1), T(1)), A);
  return grad::sub(grad::div(grad::sub(I, veil), t), S);
}

IrsTrainConfig IrsTrainConfig::full_scale() {
  IrsTrainConfig c;
  c.patch = 128;
  c.batch = 4;
  c.epochs = 300;
  c.dataset_size = 8000;
  return c;
}

void IrsTrainConfig::validate() const {
  if (patch <= 0 || patch % 16 != 0) throw std::invalid_argument("irs config: patch must be a positive multiple of 16");
  if (batch <= 0 || epochs <= 0 || dataset_size <= 0 || !(lr > 0.0))
    throw std::invalid_argument("irs config: batch, epochs, dataset size and lr must be positive");
}

namespace {

// Full-image tensors of one sample, prepared once.
struct Prepared {
  int h = 0, w = 0;
  std::vector<float> base, detail, T, S;
  std::array<float, 3> A{};
};

Prepared prepare(const rain::HeavyRainSample& s, int r, double eps) {
  const auto bd = decomp::decompose(s.I, r, eps);
  Prepared p;
  p.h = s.I.height;
  p.w = s.I.width;
  p.base = bd.base.values;
  p.detail = bd.detail.values;
  p.T = s.T.values;
  p.S = s.S_sum.values;
  p.A = s.A.rgb;
  return p;
}

void append_crop(const std::vector<float>& src, int channels, int h, int w, int y0, int x0, int ph, int pw,
                 std::vector<float>& dst) {
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < ph; ++y) {
      const auto row = src.begin() + (static_cast<std::ptrdiff_t>(c) * h + y0 + y) * w + x0;
      dst.insert(dst.end(), row, row + pw);
    }
}

struct Batch {
  Tensor<float> base, detail, A, T, S;
};

// Random patch crops when `rng` is set, whole images otherwise.
Batch make_batch(const std::vector<Prepared>& data, std::span<const std::size_t> idx, int patch,
                 std::mt19937_64* rng) {
  const Prepared& first = data[idx[0]];
  const int ph = rng ? patch : first.h, pw = rng ? patch : first.w;
  std::vector<float> base, detail, A, T, S;
  for (std::size_t i : idx) {
    const Prepared& p = data[i];
    if (p.h < ph || p.w < pw || (!rng && (p.h != ph || p.w != pw)))
      throw std::invalid_argument("irs: image " + std::to_string(p.h) + "x" + std::to_string(p.w) +
                                  " does not fit batch extent " + std::to_string(ph) + "x" + std::to_string(pw));
    const int y0 = rng ? std::uniform_int_distribution<int>(0, p.h - ph)(*rng) : 0;
    const int x0 = rng ? std::uniform_int_distribution<int>(0, p.w - pw)(*rng) : 0;
    append_crop(p.base, 3, p.h, p.w, y0, x0, ph, pw, base);
    append_crop(p.detail, 3, p.h, p.w, y0, x0, ph, pw, detail);
    append_crop(p.T, 1, p.h, p.w, y0, x0, ph, pw, T);
    append_crop(p.S, 1, p.h, p.w, y0, x0, ph, pw, S);
    A.insert(A.end(), p.A.begin(), p.A.end());
  }
  const int n = static_cast<int>(idx.size());
  return {Tensor<float>::from_data({n, 3, ph, pw}, std::move(base)),
          Tensor<float>::from_data({n, 3, ph, pw}, std::move(detail)), Tensor<float>::from_data({n, 3, 1, 1}, std::move(A)),
          Tensor<float>::from_data({n, 1, ph, pw}, std::move(T)), Tensor<float>::from_data({n, 1, ph, pw}, std::move(S))};
}

double eval_loss(const std::vector<Prepared>& data, const IrsModel<float>& model) {
  grad::NoGradGuard guard;
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t one[1] = {i};
    const Batch b = make_batch(data, one, 0, nullptr);
    total += irs_loss(irs_forward(b.base, b.detail, model), b.A, b.T, b.S).item();
  }
  return data.empty() ? 0.0 : total / static_cast<double>(data.size());
}

}  // namespace

double dataset_loss(const std::vector<rain::HeavyRainSample>& data, const IrsModel<float>& model, int r, double eps) {
  std::vector<Prepared> prepared;
  for (const auto& s : data) prepared.push_back(prepare(s, r, eps));
  return eval_loss(prepared, model);
}

IrsTrainResult train_irs(const std::vector<rain::HeavyRainSample>& data, const IrsTrainConfig& cfg, std::uint64_t seed) {
  return train_irs(data, cfg, seed, IrsModel<float>(seed, cfg.widths));
}

IrsTrainResult train_irs(const std::vector<rain::HeavyRainSample>& data, const IrsTrainConfig& cfg, std::uint64_t seed,
                         IrsModel<float> model) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train_irs: empty dataset");
  std::vector<Prepared> prepared;
  prepared.reserve(data.size());
  for (const auto& s : data) prepared.push_back(prepare(s, cfg.guided_radius, cfg.guided_eps));

  IrsTrainResult result;
  result.initial_loss = eval_loss(prepared, model);
  grad::Adam<float> opt(grad::tensors_of(model.parameters()), grad::AdamOptions{cfg.lr});
  std::mt19937_64 rng(seed ^ 0x1A5A1A5Aull);
  std::vector<std::size_t> order(prepared.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      const Batch b = make_batch(prepared, std::span<const std::size_t>(order.data() + start, stop - start), cfg.patch, &rng);
      opt.zero_grad();
      Tensor<float> loss = irs_loss(irs_forward(b.base, b.detail, model), b.A, b.T, b.S);
      loss.backward();
      opt.step();
      sum += loss.item();
      ++batches;
    }
    result.epoch_loss.push_back(sum / batches);
  }
  result.final_loss = eval_loss(prepared, model);
  result.model = std::move(model);
  return result;
}

IrsOutput estimate(const rain::Image& I, const IrsModel<float>& model, int r, double eps) {
  require_divisible(I.height, I.width);
  grad::NoGradGuard guard;
  const auto bd = decomp::decompose(I, r, eps);
  const auto est = irs_forward(rain::to_tensor<float>(bd.base), rain::to_tensor<float>(bd.detail), model);
  const rain::Plane t = rain::plane_from_tensor(est.T_map);
  const rain::Plane s = rain::plane_from_tensor(est.S);
  IrsOutput out;
  out.A = rain::image_from_tensor(est.A);
  out.T = rain::TransmissionMap(t.height, t.width);
  out.T.values = t.values;
  out.S = rain::RainLayer(s.height, s.width);
  out.S.values = s.values;
  return out;
}

rain::Image derain(const rain::Image& I, const IrsModel<float>& model, int r, double eps) {
  const IrsOutput e = estimate(I, model, r, eps);
  return rain::invert_heavy_rain(I, e.T, e.A, e.S);
}

template struct UNet<float>;
template struct UNet<double>;
template struct IrsModel<float>;
template struct IrsModel<double>;

#define RAINCAP_INSTANTIATE_IRS(T)                                                                             \
  template IrsEstimates<T> irs_forward<T>(const Tensor<T>&, const Tensor<T>&, const IrsModel<T>&);            \
  template Tensor<T> irs_loss<T>(const IrsEstimates<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> invert_in_graph<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);
RAINCAP_INSTANTIATE_IRS(float)
RAINCAP_INSTANTIATE_IRS(double)
#undef RAINCAP_INSTANTIATE_IRS

}  // namespace raincap::irs
