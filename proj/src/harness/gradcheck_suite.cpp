#include "raincap/harness/gradcheck_suite.hpp"

#include <random>

#include "raincap/caption/captioner.hpp"
#include "raincap/irs/irs.hpp"
#include "raincap/svfm/svfm.hpp"

namespace raincap::harness {

namespace {

using TD = grad::Tensor<double>;

TD uniform(const grad::Shape& s, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(s.numel()));
  for (auto& x : v) x = d(rng);
  return TD::from_data(s, std::move(v));
}

// relus at widths this small sit on their kinks too often with zero biases
void positive_biases(const grad::NamedTensors<double>& named, std::mt19937_64& rng) {
  for (auto [name, p] : named)
    if (name.ends_with(".bias"))
      for (auto& v : p.mutable_data()) v = std::uniform_real_distribution<double>(0.05, 0.3)(rng);
}

caption::CaptionDims tiny_dims() {
  caption::CaptionDims d;
  d.grid = 2;
  d.widths = {2, 2, 3, 4};
  d.attention = 3;
  d.hidden = 4;
  d.embed = 3;
  return d;
}

grad::GradCheckResult irs_case(std::uint64_t seed) {
  const irs::IrsModel<double> model(seed, irs::Widths{2, 3, 2, 2});
  std::mt19937_64 rng(seed + 1);
  const TD base = uniform({1, 3, 16, 16}, rng, 0, 1);
  const TD detail = uniform({1, 3, 16, 16}, rng, -0.3, 0.3);
  const TD A = uniform({1, 3, 1, 1}, rng, 0.6, 1);
  const TD T = uniform({1, 1, 16, 16}, rng, 0.2, 1);
  const TD S = uniform({1, 1, 16, 16}, rng, 0, 0.3);
  positive_biases(model.parameters(), rng);
  auto params = grad::tensors_of(model.parameters());
  return grad::check_gradients([&] { return irs::irs_loss(irs::irs_forward(base, detail, model), A, T, S); }, params,
                               grad::GradCheckOptions{1e-5, 6, seed, 1e-6});
}

grad::GradCheckResult svfm_case(std::uint64_t seed) {
  // the encoder needs at least 32x32 input
  const irs::IrsModel<double> irs_model(seed, irs::Widths{2, 2, 2, 2});
  caption::CaptionDims dims = tiny_dims();
  const caption::CaptionModel<double> target(dims, 6, seed + 1);
  const auto source = caption::clone_encoder(target.enc);
  std::mt19937_64 rng(seed + 2);
  positive_biases(irs_model.parameters(), rng);
  // move the source away from the target so the L1 kinks are not at zero
  for (auto [name, p] : caption::encoder_state(source, ""))
    if (name.ends_with("weight") || name.ends_with("gamma"))
      for (auto& v : p.mutable_data()) v += std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
  rain::Image I(32, 32), J(32, 32);
  for (auto& v : I.values) v = std::uniform_real_distribution<float>(0.1f, 0.9f)(rng);
  for (auto& v : J.values) v = std::uniform_real_distribution<float>(0.1f, 0.9f)(rng);
  const auto in = svfm::decompose_batch<double>({&I}, 2, 0.01);
  const TD Jt = rain::to_tensor<double>(J);
  grad::NamedTensors<double> named = irs_model.parameters();
  source.collect("svfm.source.", named);
  auto params = grad::tensors_of(named);
  return grad::check_gradients(
      [&] {
        const auto [fs, ft] = svfm::extract_features(svfm::reconstruct(in, irs_model), Jt, source, target.enc);
        return svfm::svfm_loss(fs, ft);
      },
      params, grad::GradCheckOptions{1e-6, 4, seed, 1e-6});
}

grad::GradCheckResult caption_case(std::uint64_t seed) {
  const caption::CaptionDims d = tiny_dims();
  std::mt19937_64 rng(seed);
  caption::AttentionModel<double> att(d, rng);
  caption::DecoderModel<double> dec(d, 9, rng);
  for (auto* lin : {&att.feature_proj, &att.hidden_proj})
    for (auto& v : lin->bias.mutable_data()) v = std::uniform_real_distribution<double>(0.1, 0.4)(rng);
  const TD a = uniform({2, d.L(), d.D()}, rng, -1, 1);
  const std::vector<int> c0{1, 4, 7, 5, 2}, c1{1, 8, 2};
  const auto batch = caption::make_teacher_batch({&c0, &c1}, 9, 20);
  grad::NamedTensors<double> named;
  att.collect("att.", named);
  dec.collect("dec.", named);
  auto wrt = grad::tensors_of(named);
  return grad::check_gradients([&] { return caption::teacher_forced_loss(a, att, dec, batch); }, wrt,
                               grad::GradCheckOptions{1e-5, 6, seed, 1e-6});
}

}  // namespace

std::vector<grad::GradCheckCase> composite_gradcheck_cases() {
  return {{"L_IRS", irs_case}, {"L_SVFM", svfm_case}, {"caption_xent", caption_case}};
}

std::vector<SuiteResult> run_gradcheck_suite(std::uint64_t seed) {
  std::vector<SuiteResult> out;
  for (const auto& c : grad::primitive_gradcheck_cases())
    out.push_back({c.name, false, kPrimitiveTolerance, c.run(seed)});
  for (const auto& c : composite_gradcheck_cases()) out.push_back({c.name, true, kCompositeTolerance, c.run(seed)});
  return out;
}

}  // namespace raincap::harness
