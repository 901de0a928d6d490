#include <cmath>
#include <random>

#include "doctest.h"
#include "raincap/grad/adam.hpp"
#include "raincap/grad/gradcheck.hpp"
#include "raincap/harness/shapes.hpp"
#include "raincap/irs/irs.hpp"

using namespace raincap;
using grad::Tensor;
using TF = Tensor<float>;
using TD = Tensor<double>;

namespace {

template <class T>
Tensor<T> uniform(const grad::Shape& s, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<T> v(static_cast<std::size_t>(s.numel()));
  for (auto& x : v) x = static_cast<T>(d(rng));
  return Tensor<T>::from_data(s, std::move(v));
}

std::vector<rain::HeavyRainSample> toy_samples(int n, std::uint64_t seed) {
  std::vector<rain::HeavyRainSample> out;
  const auto data = harness::gen_shapes_dataset(n, seed);
  for (int i = 0; i < n; ++i) out.push_back(rain::make_sample(data[i].image, data[i].depth, seed * 1000 + i));
  return out;
}

}  // namespace

TEST_CASE("irs_forward shapes, ranges and determinism") {
  const irs::IrsModel<float> model(1);
  std::mt19937_64 rng(2);
  const TF base = uniform<float>({2, 3, 64, 64}, rng, 0, 1);
  const TF detail = uniform<float>({2, 3, 64, 64}, rng, -0.2, 0.2);
  const auto est = irs::irs_forward(base, detail, model);
  CHECK(est.A.shape() == grad::Shape{2, 3, 64, 64});
  CHECK(est.T_map.shape() == grad::Shape{2, 1, 64, 64});
  CHECK(est.S.shape() == grad::Shape{2, 1, 64, 64});
  for (float v : est.A.data()) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
  for (float v : est.T_map.data()) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
  for (float v : est.S.data()) CHECK(v >= 0.0f);
  const auto again = irs::irs_forward(base, detail, model);
  CHECK(std::equal(est.T_map.data().begin(), est.T_map.data().end(), again.T_map.data().begin()));

  CHECK_THROWS_AS(irs::irs_forward(TF::zeros({1, 3, 40, 40}), TF::zeros({1, 3, 40, 40}), model), grad::ShapeError);
  CHECK_THROWS_AS(irs::irs_forward(TF::zeros({1, 3, 32, 32}), TF::zeros({1, 3, 16, 16}), model), grad::ShapeError);
}

TEST_CASE("parameter names") {
  const irs::IrsModel<float> model(1);
  const auto params = model.parameters();
  CHECK(params.size() == 3 * 8 * 2);
  CHECK(params.front().first == "irs.net_A.down0.weight");
  CHECK(params.back().first == "irs.net_S.up3.bias");
}

TEST_CASE("irs_loss") {
  std::mt19937_64 rng(3);
  irs::IrsEstimates<double> est{uniform<double>({2, 3, 4, 4}, rng, 0, 1), uniform<double>({2, 1, 4, 4}, rng, 0, 1),
                                uniform<double>({2, 1, 4, 4}, rng, 0, 1)};
  CHECK(irs::irs_loss(est, est.A, est.T_map, est.S).item() == 0.0);

  const double delta = 0.125;
  const TD shifted = grad::affine(est.A, 1.0, delta);
  CHECK(irs::irs_loss(est, shifted, est.T_map, est.S).item() == doctest::Approx(delta * delta).epsilon(1e-12));

  const TD A = uniform<double>({2, 3, 1, 1}, rng, 0, 1);
  const TD T = uniform<double>({2, 1, 4, 4}, rng, 0, 1);
  const TD S = uniform<double>({2, 1, 4, 4}, rng, 0, 1);
  double la = 0, lt = 0, ls = 0;
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < 16; ++k) la += std::pow(est.A.at((n * 3 + c) * 16 + k) - A.at(n * 3 + c), 2);
  for (int i = 0; i < 32; ++i) {
    lt += std::pow(est.T_map.at(i) - T.at(i), 2);
    ls += std::pow(est.S.at(i) - S.at(i), 2);
  }
  CHECK(std::abs(irs::irs_loss(est, A, T, S).item() - (la / 96 + lt / 32 + ls / 32)) < 1e-6);
  CHECK_THROWS_AS(irs::irs_loss(est, TD::zeros({2, 3, 4, 3}), T, S), grad::ShapeError);
}

TEST_CASE("L_IRS gradients match finite differences for every subnetwork") {
  const irs::IrsModel<double> model(4, irs::Widths{2, 3, 2, 2});
  std::mt19937_64 rng(5);
  const TD base = uniform<double>({1, 3, 16, 16}, rng, 0, 1);
  const TD detail = uniform<double>({1, 3, 16, 16}, rng, -0.3, 0.3);
  const TD A = uniform<double>({1, 3, 1, 1}, rng, 0.6, 1);
  const TD T = uniform<double>({1, 1, 16, 16}, rng, 0.2, 1);
  const TD S = uniform<double>({1, 1, 16, 16}, rng, 0, 0.3);
  // Nonzero biases keep every relu away from its kink at this tiny width.
  for (auto& [name, p] : model.parameters())
    if (name.ends_with(".bias"))
      for (auto& v : p.mutable_data()) v = std::uniform_real_distribution<double>(0.05, 0.3)(rng);
  auto params = grad::tensors_of(model.parameters());
  const auto res = grad::check_gradients(
      [&] { return irs::irs_loss(irs::irs_forward(base, detail, model), A, T, S); }, params,
      grad::GradCheckOptions{1e-5, 6, 9, 1e-6});
  INFO(res.worst);
  CHECK(res.passed(1e-3));
}

TEST_CASE("derain with the true parameters is the algebraic inverse") {
  const auto s = toy_samples(1, 6).front();
  const TF I = rain::to_tensor<float>(s.I);
  const TF A = TF::from_data({1, 3, 1, 1}, {s.A.rgb[0], s.A.rgb[1], s.A.rgb[2]});
  const TF J = irs::invert_in_graph(I, A, rain::to_tensor<float>(s.T), rain::to_tensor<float>(s.S_sum));
  const rain::Image direct = rain::invert_heavy_rain(s.I, s.T, s.A, s.S_sum);
  CHECK(rain::max_abs_diff(rain::image_from_tensor(J), direct) < 1e-6);
  CHECK(rain::max_abs_diff(direct, s.J) < 1e-4);
}

TEST_CASE("derain on an untrained model is finite and deterministic") {
  const irs::IrsModel<float> model(7);
  for (const auto& s : toy_samples(3, 8)) {
    const rain::Image a = irs::derain(s.I, model);
    CHECK(rain::all_finite(a));
    CHECK(irs::derain(s.I, model).values == a.values);
  }
}

TEST_CASE("short training run lowers the loss and is reproducible") {
  const auto data = toy_samples(8, 9);
  irs::IrsTrainConfig cfg;
  cfg.epochs = 6;
  cfg.patch = 32;
  const auto a = irs::train_irs(data, cfg, 11);
  const auto b = irs::train_irs(data, cfg, 11);
  CHECK(a.epoch_loss.size() == 6);
  for (double l : a.epoch_loss) CHECK(std::isfinite(l));
  CHECK(a.final_loss < 0.5 * a.initial_loss);
  CHECK(a.final_loss == b.final_loss);
  CHECK(a.epoch_loss == b.epoch_loss);
  CHECK_THROWS_AS(irs::train_irs({}, cfg, 1), std::invalid_argument);
  cfg.patch = 30;
  CHECK_THROWS_AS(irs::train_irs(data, cfg, 1), std::invalid_argument);
}

TEST_CASE("a single sample can be fitted") {
  const auto data = toy_samples(1, 12);
  irs::IrsTrainConfig cfg;
  cfg.batch = 1;
  cfg.epochs = 2000;
  const auto r = irs::train_irs(data, cfg, 13);
  CHECK(r.final_loss < 1e-3);
}

TEST_CASE("configs") {
  const auto full = irs::IrsTrainConfig::full_scale();
  CHECK(full.patch == 128);
  CHECK(full.batch == 4);
  CHECK(full.epochs == 300);
  CHECK(full.dataset_size == 8000);
  irs::IrsTrainConfig bad;
  bad.lr = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
