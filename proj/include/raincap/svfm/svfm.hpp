#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "raincap/caption/model.hpp"
#include "raincap/irs/irs.hpp"

namespace raincap::svfm {

using grad::NamedTensors;
using grad::Tensor;

/// IRS followed by the source encoder.
struct ProposedEncoder {
  irs::IrsModel<float> irs;
  caption::EncoderModel<float> source;

  /// "irs.*" then "svfm.source.*" (parameters and batch-norm buffers).
  NamedTensors<float> state() const;
};

enum class EvalMode { nic_t, nic_s, nic_t_d, proposed };
inline constexpr EvalMode kAllModes[] = {EvalMode::nic_t, EvalMode::nic_s, EvalMode::nic_t_d, EvalMode::proposed};

std::string_view mode_name(EvalMode m);
std::optional<EvalMode> parse_mode(std::string_view s);

/// Heavy-rain input next to its (fixed) guided-filter layers.
template <class T>
struct DecomposedBatch {
  Tensor<T> I;
  Tensor<T> base;
  Tensor<T> detail;
};

template <class T>
DecomposedBatch<T> decompose_batch(const std::vector<const rain::Image*>& images, int r = decomp::kDefaultRadius,
                                   double eps = decomp::kDefaultEps);

/// Same formula as irs::derain, kept in the graph so the loss reaches all
/// three subnetworks.
template <class T>
Tensor<T> reconstruct(const DecomposedBatch<T>& in, const irs::IrsModel<T>& model);

rain::Image reconstruct(const rain::Image& I, const irs::IrsModel<float>& model, int r = decomp::kDefaultRadius,
                        double eps = decomp::kDefaultEps);

/// (F_S, F_T). F_T comes from the target in evaluation mode and carries no
/// gradient. Throws std::invalid_argument if the two encoders differ in layout.
template <class T>
std::pair<Tensor<T>, Tensor<T>> extract_features(const Tensor<T>& J_hat, const Tensor<T>& J,
                                                 const caption::EncoderModel<T>& source,
                                                 const caption::EncoderModel<T>& target);

/// Mean absolute difference.
template <class T>
Tensor<T> svfm_loss(const Tensor<T>& F_S, const Tensor<T>& F_T);

struct SvfmTrainConfig {
  int epochs = 60;
  int batch = 10;
  double lr = 1e-3;
  bool update_irs = true;  // the IRS keeps learning end to end
  int guided_radius = decomp::kDefaultRadius;
  double guided_eps = decomp::kDefaultEps;

  void validate() const;
};

struct SvfmPair {
  rain::Image I;  // heavy rain
  rain::Image J;  // clean
};

struct SvfmTrainResult {
  ProposedEncoder model;
  std::vector<double> epoch_loss;
  double initial_loss = 0;  // mean feature distance over the pairs before training
  double final_loss = 0;
};

/// Source encoder starts as a copy of the target, the IRS as a copy of
/// `init_irs`. Only IRS and source weights move.
SvfmTrainResult train_svfm(const std::vector<SvfmPair>& pairs, const caption::EncoderModel<float>& target,
                           const irs::IrsModel<float>& init_irs, const SvfmTrainConfig& cfg, std::uint64_t seed);

struct NicSTrainResult {
  caption::EncoderModel<float> source;
  std::vector<double> epoch_loss;
  double initial_loss = 0;
  double final_loss = 0;
};

/// Same matching objective with the source encoder reading I directly.
NicSTrainResult train_nic_s(const std::vector<SvfmPair>& pairs, const caption::EncoderModel<float>& target,
                            const SvfmTrainConfig& cfg, std::uint64_t seed);

/// Mean L1 feature distance with the proposed pipeline, no gradient.
double proposed_distance(const std::vector<SvfmPair>& pairs, const ProposedEncoder& model,
                         const caption::EncoderModel<float>& target, int r = decomp::kDefaultRadius,
                         double eps = decomp::kDefaultEps);
/// Same, with `source` applied to I directly.
double direct_distance(const std::vector<SvfmPair>& pairs, const caption::EncoderModel<float>& source,
                       const caption::EncoderModel<float>& target);

/// Everything caption_with_mode may need. Null members are allowed when the
/// requested mode does not use them.
struct ModeModels {
  const caption::CaptionModel<float>* captioner = nullptr;  // target encoder + attention + decoder
  const caption::EncoderModel<float>* nic_s = nullptr;
  const irs::IrsModel<float>* derain_irs = nullptr;         // NIC_T(D)
  const ProposedEncoder* proposed = nullptr;
  int guided_radius = decomp::kDefaultRadius;
  double guided_eps = decomp::kDefaultEps;
};

/// Feature grid [1, L, D] fed to the shared decoder for `mode`.
Tensor<float> mode_features(const rain::Image& I, EvalMode mode, const ModeModels& models);

/// Greedy caption through the shared frozen attention and decoder.
std::vector<int> caption_with_mode(const rain::Image& I, EvalMode mode, const ModeModels& models,
                                   int max_len = caption::kMaxCaptionLength);

}  // namespace raincap::svfm
