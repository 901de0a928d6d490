#include <cmath>
#include <random>

#include "doctest.h"
#include "raincap/caption/captioner.hpp"
#include "raincap/grad/gradcheck.hpp"
#include "raincap/harness/shapes.hpp"
#include "raincap/svfm/svfm.hpp"

using namespace raincap;
using namespace raincap::svfm;
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

template <class T>
std::vector<T> values(const Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

template <class T>
std::vector<std::vector<T>> snapshot(const NamedTensors<T>& named) {
  std::vector<std::vector<T>> out;
  for (const auto& [n, t] : named) out.push_back(values(t));
  return out;
}

template <class T>
void positive_biases(const NamedTensors<T>& named, std::mt19937_64& rng) {
  for (auto [name, p] : named)
    if (name.ends_with(".bias"))
      for (auto& v : p.mutable_data()) v = static_cast<T>(std::uniform_real_distribution<double>(0.05, 0.3)(rng));
}

caption::CaptionDims tiny_dims() {
  caption::CaptionDims d;
  d.grid = 2;
  d.widths = {2, 2, 3, 4};
  return d;
}

std::vector<SvfmPair> toy_pairs(int n, std::uint64_t seed) {
  std::vector<SvfmPair> out;
  for (const auto& r : harness::gen_shapes_dataset(n, seed)) {
    const auto s = rain::make_sample(r.image, r.depth, seed + out.size());
    out.push_back({s.I, s.J});
  }
  return out;
}

}  // namespace

TEST_CASE("mode names") {
  for (EvalMode m : kAllModes) CHECK(parse_mode(mode_name(m)) == m);
  CHECK(mode_name(EvalMode::nic_t_d) == "nic_t_d");
  CHECK_FALSE(parse_mode("NIC_T").has_value());
}

TEST_CASE("reconstruct matches derain and stays finite") {
  const irs::IrsModel<float> model(1);
  for (const auto& p : toy_pairs(3, 2)) {
    const rain::Image a = reconstruct(p.I, model);
    const rain::Image b = irs::derain(p.I, model);
    CHECK(rain::max_abs_diff(a, b) < 1e-6);
    CHECK(rain::all_finite(a));
  }
  std::mt19937_64 rng(3);
  rain::Image noise(32, 32);
  for (auto& v : noise.values) v = std::uniform_real_distribution<float>(0, 1)(rng);
  CHECK(rain::all_finite(reconstruct(noise, irs::IrsModel<float>(4))));
  CHECK_THROWS_AS(reconstruct(rain::Image(40, 40), model), grad::ShapeError);
}

TEST_CASE("gradient of the reconstruction reaches every IRS subnetwork") {
  const irs::IrsModel<double> model(5, irs::Widths{2, 3, 2, 2});
  std::mt19937_64 rng(6);
  positive_biases(model.parameters(), rng);
  rain::Image I(16, 16);
  for (auto& v : I.values) v = std::uniform_real_distribution<float>(0.1f, 0.9f)(rng);
  const auto in = decompose_batch<double>({&I}, 2, 0.01);
  auto params = grad::tensors_of(model.parameters());
  const auto res = grad::check_gradients([&] { return grad::sum(reconstruct(in, model)); }, params,
                                         grad::GradCheckOptions{1e-5, 6, 7, 1e-6});
  INFO(res.worst);
  CHECK(res.passed(1e-3));
}

TEST_CASE("extract_features") {
  const caption::CaptionModel<float> target(caption::CaptionDims{}, 8, 8);
  auto source = caption::clone_encoder(target.enc);
  std::mt19937_64 rng(9);
  const TF J = uniform<float>({2, 3, 64, 64}, rng, 0, 1);
  auto [fs, ft] = extract_features(J, J, source, target.enc);
  CHECK(values(fs) == values(ft));
  CHECK(fs.shape() == grad::Shape{2, 16, 128});
  CHECK_FALSE(ft.requires_grad());

  const auto before = values(ft);
  source.conv[0].weight.mutable_data()[0] += 0.5f;
  std::tie(fs, ft) = extract_features(J, J, source, target.enc);
  CHECK(values(ft) == before);
  CHECK(values(fs) != before);

  caption::CaptionDims other;
  other.grid = 2;
  const caption::CaptionModel<float> small(other, 8, 1);
  CHECK_THROWS_AS(extract_features(J, J, small.enc, target.enc), std::invalid_argument);
}

TEST_CASE("svfm_loss") {
  std::mt19937_64 rng(10);
  const TD a = uniform<double>({2, 4, 5}, rng, -1, 1);
  CHECK(svfm_loss(a, a).item() == 0.0);
  TD b = a.detach();
  b.mutable_data()[7] += 0.25;
  CHECK(svfm_loss(a, b).item() == doctest::Approx(0.25 / 40).epsilon(1e-12));
  const TD c = uniform<double>({2, 4, 5}, rng, -1, 1);
  double oracle = 0;
  for (int i = 0; i < 40; ++i) oracle += std::abs(a.at(i) - c.at(i));
  CHECK(std::abs(svfm_loss(a, c).item() - oracle / 40) < 1e-7);
  CHECK_THROWS_AS(svfm_loss(a, TD::zeros({2, 5, 4})), grad::ShapeError);
}

TEST_CASE("end-to-end gradient check through reconstruction, features and L1") {
  const irs::IrsModel<double> irs_model(11, irs::Widths{2, 2, 2, 2});
  const caption::CaptionModel<double> target(tiny_dims(), 6, 12);
  const auto source = caption::clone_encoder(target.enc);
  std::mt19937_64 rng(13);
  positive_biases(irs_model.parameters(), rng);
  // move the source away from the target so the L1 kinks are not at zero
  for (auto [name, p] : caption::encoder_state(source, ""))
    if (name.ends_with("weight") || name.ends_with("gamma"))
      for (auto& v : p.mutable_data()) v += std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
  rain::Image I(32, 32), J(32, 32);
  for (auto& v : I.values) v = std::uniform_real_distribution<float>(0.1f, 0.9f)(rng);
  for (auto& v : J.values) v = std::uniform_real_distribution<float>(0.1f, 0.9f)(rng);
  const auto in = decompose_batch<double>({&I}, 2, 0.01);
  const TD Jt = rain::to_tensor<double>(J);
  NamedTensors<double> named = irs_model.parameters();
  source.collect("svfm.source.", named);
  auto params = grad::tensors_of(named);
  const auto res = grad::check_gradients(
      [&] {
        const auto [fs, ft] = extract_features(reconstruct(in, irs_model), Jt, source, target.enc);
        return svfm_loss(fs, ft);
      },
      params, grad::GradCheckOptions{1e-6, 4, 14, 1e-6});
  INFO(res.worst);
  CHECK(res.passed(1e-3));
}

TEST_CASE("train_svfm lowers the matching loss and never touches the target") {
  const auto pairs = toy_pairs(6, 15);
  const caption::CaptionModel<float> target(caption::CaptionDims{}, 8, 16);
  const irs::IrsModel<float> init(17);
  const auto target_before = snapshot(caption::encoder_state(target.enc, ""));
  const auto irs_before = snapshot(init.parameters());
  SvfmTrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch = 3;
  const auto a = train_svfm(pairs, target.enc, init, cfg, 18);
  const auto b = train_svfm(pairs, target.enc, init, cfg, 18);
  CHECK(a.epoch_loss.size() == 6);
  CHECK(a.final_loss < a.initial_loss);
  CHECK(a.final_loss == b.final_loss);
  CHECK(a.epoch_loss == b.epoch_loss);
  CHECK(snapshot(caption::encoder_state(target.enc, "")) == target_before);
  CHECK(snapshot(init.parameters()) == irs_before);
  CHECK(snapshot(a.model.irs.parameters()) != irs_before);
  CHECK(std::abs(proposed_distance(pairs, a.model, target.enc) - a.final_loss) < 1e-5);

  const auto names = a.model.state();
  CHECK(names.front().first.starts_with("irs.net_A."));
  CHECK(names.back().first.starts_with("svfm.source.bn3."));

  cfg.update_irs = false;
  const auto frozen = train_svfm(pairs, target.enc, init, cfg, 18);
  CHECK(snapshot(frozen.model.irs.parameters()) == irs_before);
  CHECK(frozen.final_loss < frozen.initial_loss);

  cfg.epochs = 0;
  CHECK_THROWS_AS(train_svfm(pairs, target.enc, init, cfg, 1), std::invalid_argument);
  CHECK_THROWS_AS(train_svfm({}, target.enc, init, SvfmTrainConfig{}, 1), std::invalid_argument);
}

TEST_CASE("train_nic_s") {
  const auto pairs = toy_pairs(6, 19);
  const caption::CaptionModel<float> target(caption::CaptionDims{}, 8, 20);
  const auto target_before = snapshot(caption::encoder_state(target.enc, ""));
  SvfmTrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch = 3;
  const auto a = train_nic_s(pairs, target.enc, cfg, 21);
  const auto b = train_nic_s(pairs, target.enc, cfg, 21);
  CHECK(a.final_loss < a.initial_loss);
  CHECK(a.epoch_loss == b.epoch_loss);
  CHECK(snapshot(caption::encoder_state(target.enc, "")) == target_before);
  CHECK(std::abs(direct_distance(pairs, a.source, target.enc) - a.final_loss) < 1e-5);
  CHECK(std::abs(direct_distance(pairs, target.enc, target.enc) - a.initial_loss) < 1e-6);
}

TEST_CASE("caption_with_mode routing") {
  const auto pairs = toy_pairs(3, 22);
  const caption::CaptionModel<float> cap(caption::CaptionDims{}, 12, 23);
  const auto nic_s = caption::clone_encoder(cap.enc);
  const irs::IrsModel<float> derain_irs(24);
  const ProposedEncoder proposed{irs::IrsModel<float>(25), caption::clone_encoder(cap.enc)};
  ModeModels mm;
  mm.captioner = &cap;
  for (const auto& p : pairs) {
    CHECK(caption_with_mode(p.I, EvalMode::nic_t, mm) == caption::caption_greedy(p.I, cap));
    CHECK_THROWS_AS(caption_with_mode(p.I, EvalMode::nic_s, mm), std::invalid_argument);
    CHECK_THROWS_AS(caption_with_mode(p.I, EvalMode::nic_t_d, mm), std::invalid_argument);
    CHECK_THROWS_AS(caption_with_mode(p.I, EvalMode::proposed, mm), std::invalid_argument);
  }
  mm.nic_s = &nic_s;
  mm.derain_irs = &derain_irs;
  mm.proposed = &proposed;
  for (const auto& p : pairs)
    for (EvalMode m : kAllModes) {
      CHECK(caption_with_mode(p.I, m, mm).size() <= caption::kMaxCaptionLength);
      CHECK(caption_with_mode(p.I, m, mm, 4).size() <= 4);
    }
  // nic_s is a copy of the target, so it must agree with nic_t
  CHECK(caption_with_mode(pairs[0].I, EvalMode::nic_s, mm) == caption_with_mode(pairs[0].I, EvalMode::nic_t, mm));
  CHECK(values(mode_features(pairs[1].I, EvalMode::nic_t_d, mm)) ==
        values(caption::encode(irs::derain(pairs[1].I, derain_irs), cap.enc)));
  ModeModels none;
  CHECK_THROWS_AS(caption_with_mode(pairs[0].I, EvalMode::nic_t, none), std::invalid_argument);
}

TEST_CASE("a perfect reconstruction gives the clean-image caption") {
  // T saturates at 1 and S at 0, so the reconstruction is the input itself
  ProposedEncoder proposed{irs::IrsModel<float>(26), {}};
  for (auto* net : {&proposed.irs.net_T, &proposed.irs.net_S}) {
    for (auto& v : net->up[3].weight.mutable_data()) v = 0;
    for (auto& v : net->up[3].bias.mutable_data()) v = net == &proposed.irs.net_T ? 50.0f : -50.0f;
  }
  const caption::CaptionModel<float> cap(caption::CaptionDims{}, 12, 27);
  proposed.source = caption::clone_encoder(cap.enc);
  ModeModels mm;
  mm.captioner = &cap;
  mm.proposed = &proposed;
  for (const auto& r : harness::gen_shapes_dataset(4, 28)) {
    const std::vector<rain::RainLayer> no_rain{rain::RainLayer(64, 64, 0.0f)};
    const rain::Image clean = rain::compose_heavy_rain(r.image, no_rain, rain::TransmissionMap(64, 64, 1.0f),
                                                       rain::AtmosphericMap{{0.9f, 0.9f, 0.9f}});
    CHECK(clean.values == r.image.values);
    CHECK(rain::max_abs_diff(reconstruct(clean, proposed.irs), clean) == 0.0);
    CHECK(caption_with_mode(clean, EvalMode::proposed, mm) == caption::caption_greedy(r.image, cap));
  }
}
