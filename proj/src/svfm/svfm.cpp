#include "raincap/svfm/svfm.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>

#include "raincap/caption/captioner.hpp"
#include "raincap/grad/adam.hpp"

namespace raincap::svfm {

namespace g = raincap::grad;
using caption::EncoderModel;

NamedTensors<float> ProposedEncoder::state() const {
  NamedTensors<float> s = irs.parameters();
  for (auto& e : caption::encoder_state(source, "svfm.source.")) s.push_back(std::move(e));
  return s;
}

std::string_view mode_name(EvalMode m) {
  switch (m) {
    case EvalMode::nic_t: return "nic_t";
    case EvalMode::nic_s: return "nic_s";
    case EvalMode::nic_t_d: return "nic_t_d";
    case EvalMode::proposed: return "proposed";
  }
  return "?";
}

std::optional<EvalMode> parse_mode(std::string_view s) {
  for (EvalMode m : kAllModes)
    if (mode_name(m) == s) return m;
  return std::nullopt;
}

template <class T>
DecomposedBatch<T> decompose_batch(const std::vector<const rain::Image*>& images, int r, double eps) {
  if (images.empty()) throw std::invalid_argument("empty image batch");
  std::vector<decomp::BaseDetailPair> layers;
  std::vector<const rain::Image*> base, detail;
  layers.reserve(images.size());
  for (const auto* img : images) {
    irs::require_divisible(img->height, img->width);
    layers.push_back(decomp::decompose(*img, r, eps));
  }
  for (const auto& l : layers) {
    base.push_back(&l.base);
    detail.push_back(&l.detail);
  }
  return {rain::stack<T>(images), rain::stack<T>(base), rain::stack<T>(detail)};
}

template <class T>
Tensor<T> reconstruct(const DecomposedBatch<T>& in, const irs::IrsModel<T>& model) {
  const auto est = irs::irs_forward(in.base, in.detail, model);
  return irs::invert_in_graph(in.I, est.A, est.T_map, est.S);
}

rain::Image reconstruct(const rain::Image& I, const irs::IrsModel<float>& model, int r, double eps) {
  g::NoGradGuard no_grad;
  return rain::image_from_tensor(reconstruct(decompose_batch<float>({&I}, r, eps), model));
}

namespace {

template <class T>
void require_same_layout(const EncoderModel<T>& a, const EncoderModel<T>& b) {
  if (!(a.dims == b.dims)) throw std::invalid_argument("source and target encoders are configured differently");
}

void check_pairs(const std::vector<SvfmPair>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("feature matching needs at least one pair");
  for (const auto& p : pairs)
    if (!p.I.same_extent(p.J) || !p.I.same_extent(pairs.front().I))
      throw std::invalid_argument("every rain/clean pair must share one extent");
}

// Frozen target features for every pair, [1,L,D] each.
std::vector<Tensor<float>> target_features(const std::vector<SvfmPair>& pairs, const EncoderModel<float>& target) {
  g::NoGradGuard no_grad;
  std::vector<Tensor<float>> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(caption::encode(p.J, target));
  return out;
}

using SourceInput = std::function<Tensor<float>(std::span<const std::size_t>)>;

struct Loop {
  std::vector<double> epoch_loss;
  double initial = 0;
  double final_ = 0;
};

// Shared matching loop. `input(idx)` builds the source-encoder input for a batch
// of pair indices; the source runs with frozen batch-norm statistics.
Loop match_features(std::size_t n, const std::vector<Tensor<float>>& F_T, const EncoderModel<float>& source,
                    const SourceInput& input, std::vector<Tensor<float>> params, const SvfmTrainConfig& cfg,
                    std::uint64_t seed) {
  auto batch_target = [&](std::span<const std::size_t> idx) {
    std::vector<Tensor<float>> parts;
    for (std::size_t i : idx) parts.push_back(F_T[i]);
    return g::concat(std::span<const Tensor<float>>(parts), 0);
  };
  auto distance = [&] {
    g::NoGradGuard no_grad;
    double total = 0;
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t at = 0; at < n; at += 16) {
      const auto part = std::span<const std::size_t>(idx).subspan(at, std::min<std::size_t>(16, n - at));
      const Tensor<float> f = source.forward(input(part));
      total += svfm_loss(f, batch_target(part)).item() * static_cast<double>(part.size());
    }
    return total / static_cast<double>(n);
  };

  Loop out;
  out.initial = distance();
  g::Adam<float> opt(std::move(params), g::AdamOptions{cfg.lr});
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t bsz = std::min<std::size_t>(n, static_cast<std::size_t>(cfg.batch));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0;
    int batches = 0;
    for (std::size_t at = 0; at + bsz <= n; at += bsz) {
      const auto idx = std::span<const std::size_t>(order).subspan(at, bsz);
      const Tensor<float> loss = svfm_loss(source.forward(input(idx)), batch_target(idx));
      opt.zero_grad();
      loss.backward();
      opt.step();
      const double l = loss.item();
      if (!std::isfinite(l)) throw std::runtime_error("feature matching diverged in epoch " + std::to_string(epoch));
      sum += l;
      ++batches;
    }
    out.epoch_loss.push_back(sum / batches);
  }
  out.final_ = distance();
  return out;
}

template <class T>
std::vector<T> concat_vectors(std::vector<T> a, const std::vector<T>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

template <class T>
std::pair<Tensor<T>, Tensor<T>> extract_features(const Tensor<T>& J_hat, const Tensor<T>& J,
                                                 const EncoderModel<T>& source, const EncoderModel<T>& target) {
  require_same_layout(source, target);
  Tensor<T> F_T;
  {
    g::NoGradGuard no_grad;
    F_T = target.forward(J);
  }
  return {source.forward(J_hat), F_T};
}

template <class T>
Tensor<T> svfm_loss(const Tensor<T>& F_S, const Tensor<T>& F_T) {
  if (F_S.shape() != F_T.shape())
    throw g::ShapeError("feature shapes differ: " + F_S.shape().str() + " vs " + F_T.shape().str());
  return g::l1_loss(F_S, F_T);
}

void SvfmTrainConfig::validate() const {
  if (epochs < 1 || batch < 1) throw std::invalid_argument("svfm config: epochs and batch must be positive");
  if (!(lr > 0) || !std::isfinite(lr)) throw std::invalid_argument("svfm config: lr must be positive");
  if (guided_radius < 1 || !(guided_eps > 0)) throw std::invalid_argument("svfm config: bad guided filter settings");
}

SvfmTrainResult train_svfm(const std::vector<SvfmPair>& pairs, const EncoderModel<float>& target,
                           const irs::IrsModel<float>& init_irs, const SvfmTrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  check_pairs(pairs);
  SvfmTrainResult res;
  res.model.irs = init_irs.clone();
  res.model.source = caption::clone_encoder(target);
  require_same_layout(res.model.source, target);

  // the guided filter has no parameters, so its layers are computed once
  std::vector<DecomposedBatch<float>> layers;
  for (const auto& p : pairs) layers.push_back(decompose_batch<float>({&p.I}, cfg.guided_radius, cfg.guided_eps));
  const auto F_T = target_features(pairs, target);

  const irs::IrsModel<float>& irs_model = res.model.irs;
  const SourceInput input = [&](std::span<const std::size_t> idx) {
    std::vector<Tensor<float>> I, base, detail;
    for (std::size_t i : idx) {
      I.push_back(layers[i].I);
      base.push_back(layers[i].base);
      detail.push_back(layers[i].detail);
    }
    const DecomposedBatch<float> b{g::concat(std::span<const Tensor<float>>(I), 0),
                                   g::concat(std::span<const Tensor<float>>(base), 0),
                                   g::concat(std::span<const Tensor<float>>(detail), 0)};
    return reconstruct(b, irs_model);
  };
  NamedTensors<float> src;
  res.model.source.collect("svfm.source.", src);
  auto params = g::tensors_of(src);
  if (cfg.update_irs) params = concat_vectors(g::tensors_of(res.model.irs.parameters()), params);

  const Loop l = match_features(pairs.size(), F_T, res.model.source, input, std::move(params), cfg, seed);
  res.epoch_loss = l.epoch_loss;
  res.initial_loss = l.initial;
  res.final_loss = l.final_;
  return res;
}

NicSTrainResult train_nic_s(const std::vector<SvfmPair>& pairs, const EncoderModel<float>& target,
                            const SvfmTrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  check_pairs(pairs);
  NicSTrainResult res;
  res.source = caption::clone_encoder(target);
  const auto F_T = target_features(pairs, target);
  std::vector<Tensor<float>> inputs;
  for (const auto& p : pairs) inputs.push_back(rain::to_tensor<float>(p.I));
  const SourceInput input = [&](std::span<const std::size_t> idx) {
    std::vector<Tensor<float>> parts;
    for (std::size_t i : idx) parts.push_back(inputs[i]);
    return g::concat(std::span<const Tensor<float>>(parts), 0);
  };
  NamedTensors<float> src;
  res.source.collect("svfm.source.", src);
  const Loop l = match_features(pairs.size(), F_T, res.source, input, g::tensors_of(src), cfg, seed);
  res.epoch_loss = l.epoch_loss;
  res.initial_loss = l.initial;
  res.final_loss = l.final_;
  return res;
}

double proposed_distance(const std::vector<SvfmPair>& pairs, const ProposedEncoder& model,
                         const EncoderModel<float>& target, int r, double eps) {
  check_pairs(pairs);
  require_same_layout(model.source, target);
  g::NoGradGuard no_grad;
  double total = 0;
  for (const auto& p : pairs) {
    const Tensor<float> j_hat = reconstruct(decompose_batch<float>({&p.I}, r, eps), model.irs);
    const auto [fs, ft] = extract_features(j_hat, rain::to_tensor<float>(p.J), model.source, target);
    total += svfm_loss(fs, ft).item();
  }
  return total / static_cast<double>(pairs.size());
}

double direct_distance(const std::vector<SvfmPair>& pairs, const EncoderModel<float>& source,
                       const EncoderModel<float>& target) {
  check_pairs(pairs);
  g::NoGradGuard no_grad;
  double total = 0;
  for (const auto& p : pairs) {
    const auto [fs, ft] = extract_features(rain::to_tensor<float>(p.I), rain::to_tensor<float>(p.J), source, target);
    total += svfm_loss(fs, ft).item();
  }
  return total / static_cast<double>(pairs.size());
}

Tensor<float> mode_features(const rain::Image& I, EvalMode mode, const ModeModels& m) {
  auto need = [&](const void* p, const char* what) {
    if (!p) throw std::invalid_argument(std::string("mode ") + std::string(mode_name(mode)) + " needs " + what);
  };
  need(m.captioner, "the captioner");
  g::NoGradGuard no_grad;
  switch (mode) {
    case EvalMode::nic_t:
      return caption::encode(I, m.captioner->enc);
    case EvalMode::nic_s:
      need(m.nic_s, "the NIC_S encoder");
      require_same_layout(*m.nic_s, m.captioner->enc);
      return caption::encode(I, *m.nic_s);
    case EvalMode::nic_t_d:
      need(m.derain_irs, "a deraining IRS");
      return caption::encode(irs::derain(I, *m.derain_irs, m.guided_radius, m.guided_eps), m.captioner->enc);
    case EvalMode::proposed:
      need(m.proposed, "the proposed encoder");
      require_same_layout(m.proposed->source, m.captioner->enc);
      return m.proposed->source.forward(
          reconstruct(decompose_batch<float>({&I}, m.guided_radius, m.guided_eps), m.proposed->irs));
  }
  throw std::invalid_argument("unknown evaluation mode");
}

std::vector<int> caption_with_mode(const rain::Image& I, EvalMode mode, const ModeModels& models, int max_len) {
  const Tensor<float> a = mode_features(I, mode, models);
  return caption::greedy_decode(a, models.captioner->att, models.captioner->dec, max_len).tokens;
}

#define RAINCAP_INSTANTIATE_SVFM(T)                                                                              \
  template DecomposedBatch<T> decompose_batch<T>(const std::vector<const rain::Image*>&, int, double);          \
  template Tensor<T> reconstruct<T>(const DecomposedBatch<T>&, const irs::IrsModel<T>&);                        \
  template std::pair<Tensor<T>, Tensor<T>> extract_features<T>(const Tensor<T>&, const Tensor<T>&,               \
                                                               const EncoderModel<T>&, const EncoderModel<T>&); \
  template Tensor<T> svfm_loss<T>(const Tensor<T>&, const Tensor<T>&);
RAINCAP_INSTANTIATE_SVFM(float)
RAINCAP_INSTANTIATE_SVFM(double)
#undef RAINCAP_INSTANTIATE_SVFM

}  // namespace raincap::svfm
