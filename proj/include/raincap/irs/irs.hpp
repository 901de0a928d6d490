#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "raincap/decomp/guided_filter.hpp"
#include "raincap/grad/nn.hpp"
#include "raincap/rain/rain_model.hpp"

namespace raincap::irs {

using Widths = std::array<int, 4>;
inline constexpr Widths kDefaultWidths{16, 32, 64, 64};

enum class OutputActivation { sigmoid, relu };

/// Four stride-2 3x3 convs down, four nearest-upsample + 3x3 conv steps up,
/// each up step concatenating the matching down level (the last one the input).
template <class T>
struct UNet {
  std::array<grad::Conv2d<T>, 4> down;
  std::array<grad::Conv2d<T>, 4> up;
  OutputActivation activation = OutputActivation::sigmoid;

  UNet() = default;
  UNet(int in_channels, int out_channels, const Widths& widths, OutputActivation act, std::mt19937_64& rng);

  grad::Tensor<T> operator()(const grad::Tensor<T>& x) const;
  void collect(const std::string& prefix, grad::NamedTensors<T>& params) const;
};

template <class T>
struct IrsModel {
  UNet<T> net_A;  // base -> A, 3 channels
  UNet<T> net_T;  // concat(base, detail) -> T, 1 channel
  UNet<T> net_S;  // detail -> S, 1 channel

  IrsModel() = default;
  explicit IrsModel(std::uint64_t seed, const Widths& widths = kDefaultWidths);

  /// Named "irs.net_A.*", "irs.net_T.*", "irs.net_S.*".
  grad::NamedTensors<T> parameters() const;
  Widths widths() const;
  /// Independent copy; shares no tensor with this model.
  IrsModel clone() const;
};

template <class T>
struct IrsEstimates {
  grad::Tensor<T> A;  // [N,3,H,W] in (0,1)
  grad::Tensor<T> T_map;  // [N,1,H,W] in (0,1)
  grad::Tensor<T> S;  // [N,1,H,W] >= 0
};

/// Throws grad::ShapeError unless both extents are positive multiples of 16.
void require_divisible(int h, int w);

template <class T>
IrsEstimates<T> irs_forward(const grad::Tensor<T>& base, const grad::Tensor<T>& detail, const IrsModel<T>& model);

/// mse(A) + mse(T) + mse(S), each mean-reduced. `A` may be [N,3,1,1]
/// per-channel scalars; it is broadcast to the full map.
template <class T>
grad::Tensor<T> irs_loss(const IrsEstimates<T>& est, const grad::Tensor<T>& A, const grad::Tensor<T>& T_map,
                         const grad::Tensor<T>& S);

/// J = (I - (1 - T) A) / max(T, t_min) - S inside the graph.
template <class T>
grad::Tensor<T> invert_in_graph(const grad::Tensor<T>& I, const grad::Tensor<T>& A, const grad::Tensor<T>& T_map,
                                const grad::Tensor<T>& S, T t_min = T(rain::kTransmissionFloor));

struct IrsTrainConfig {
  int patch = 64;
  int batch = 4;
  int epochs = 100;
  double lr = 1e-3;
  int dataset_size = 50;
  int guided_radius = decomp::kDefaultRadius;
  double guided_eps = decomp::kDefaultEps;
  Widths widths = kDefaultWidths;

  /// 8000 images, 128x128 patches, batch 4, 300 epochs.
  static IrsTrainConfig full_scale();
  void validate() const;
};

struct IrsTrainResult {
  IrsModel<float> model;
  std::vector<double> epoch_loss;  // mean batch loss per epoch
  double initial_loss = 0.0;       // full-image loss over the dataset before training
  double final_loss = 0.0;         // same, after training
};

/// Mean L_IRS over full images, no gradient.
double dataset_loss(const std::vector<rain::HeavyRainSample>& data, const IrsModel<float>& model, int r = decomp::kDefaultRadius,
                    double eps = decomp::kDefaultEps);

IrsTrainResult train_irs(const std::vector<rain::HeavyRainSample>& data, const IrsTrainConfig& cfg, std::uint64_t seed);

/// Continues training `model` in place; used by train_irs and for resuming.
IrsTrainResult train_irs(const std::vector<rain::HeavyRainSample>& data, const IrsTrainConfig& cfg, std::uint64_t seed,
                         IrsModel<float> model);

struct IrsOutput {
  rain::Image A;
  rain::TransmissionMap T;
  rain::RainLayer S;
};

IrsOutput estimate(const rain::Image& I, const IrsModel<float>& model, int r = decomp::kDefaultRadius,
                   double eps = decomp::kDefaultEps);

/// Decompose, estimate (A, T, S), invert with T clamped at t_min.
rain::Image derain(const rain::Image& I, const IrsModel<float>& model, int r = decomp::kDefaultRadius,
                   double eps = decomp::kDefaultEps);

extern template struct UNet<float>;
extern template struct UNet<double>;
extern template struct IrsModel<float>;
extern template struct IrsModel<double>;

}  // namespace raincap::irs
