#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "raincap/rain/image.hpp"

namespace raincap::rain {

inline constexpr float kTransmissionFloor = 0.05f;

struct StreakParams {
  int layers = 1;
  double density = 0.003;
  double sigma = 1.0;
  int length = 25;
  double angle_deg = 90.0;
  double atmosphere = 0.85;
  double beta = 1.0;

  /// Throws std::invalid_argument when a field is out of its domain.
  void validate() const;
};

/// Closed ranges that make_sample draws StreakParams from.
struct StreakRanges {
  int layers_min = 1, layers_max = 3;
  double density_min = 0.001, density_max = 0.004;
  double sigma_min = 0.5, sigma_max = 1.0;
  int length_min = 15, length_max = 40;
  double angle_min = 60.0, angle_max = 120.0;
  double atmosphere_min = 0.7, atmosphere_max = 1.0;
  double beta_min = 0.5, beta_max = 2.0;

  void validate() const;
  StreakParams draw(std::uint64_t seed) const;
};

/// One atmospheric light value per channel.
struct AtmosphericMap {
  std::array<float, 3> rgb{1.0f, 1.0f, 1.0f};
};

struct HeavyRainSample {
  Image J;
  Image I;
  TransmissionMap T;
  RainLayer S_sum;
  AtmosphericMap A;
  DepthMap depth;
  std::uint64_t seed = 0;
  StreakParams params;
};

/// Normalized line kernel (sums to 1) of `length` pixels at `angle_deg`,
/// 0 = horizontal, 90 = vertical. Returned as a square plane of odd size.
Plane line_kernel(int length, double angle_deg);

/// Gaussian noise thresholded at its (1 - density) quantile. Pre-blur seeds.
RainLayer streak_seeds(std::uint64_t seed, const StreakParams& params, int h, int w);
RainLayer synth_streak_layer(std::uint64_t seed, const StreakParams& params, int h, int w);

TransmissionMap depth_to_transmission(const DepthMap& depth, double beta);

RainLayer sum_layers(std::span<const RainLayer> layers, int h, int w);

/// R = J + sum of layers, added equally to every channel.
Image compose_streaks(const Image& J, std::span<const RainLayer> layers);

/// I = T (J + sum S) + (1 - T) A, per channel.
Image compose_heavy_rain(const Image& J, std::span<const RainLayer> layers, const TransmissionMap& T,
                         const AtmosphericMap& A);

/// J = (I - (1 - T) A) / T - S with T clamped below at `t_min`.
Image invert_heavy_rain(const Image& I, const TransmissionMap& T, const AtmosphericMap& A, const RainLayer& S,
                        float t_min = kTransmissionFloor);

/// Full-map variant used when A is estimated per pixel.
Image invert_heavy_rain(const Image& I, const TransmissionMap& T, const Image& A, const RainLayer& S,
                        float t_min = kTransmissionFloor);

HeavyRainSample make_sample(const Image& J, const DepthMap& depth, std::uint64_t seed,
                            const StreakRanges& ranges = {});

/// Per-layer seed, decorrelated from the sample seed.
std::uint64_t layer_seed(std::uint64_t sample_seed, int layer);

}  // namespace raincap::rain
