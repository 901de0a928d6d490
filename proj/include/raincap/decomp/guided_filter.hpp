#pragma once

#include "raincap/rain/image.hpp"
#include "raincap/rain/rain_model.hpp"

namespace raincap::decomp {

inline constexpr int kDefaultRadius = 8;
inline constexpr double kDefaultEps = 0.01;

struct BaseDetailPair {
  rain::Image base;
  rain::Image detail;  // signed
};

/// Mean over the (2r+1)^2 window with edge-replicated borders.
rain::Plane box_filter(const rain::Plane& p, int r);

/// Self-guided filter, each channel independently.
rain::Image guided_filter(const rain::Image& p, int r = kDefaultRadius, double eps = kDefaultEps);

BaseDetailPair decompose(const rain::Image& I, int r = kDefaultRadius, double eps = kDefaultEps);

/// Share of the streak signal T*S that the detail layer picks up:
/// <d, T S> / <T S, T S>, with d the detail of I minus the detail of the same
/// scene composed without streaks.
double streak_energy_in_detail(const rain::HeavyRainSample& s, int r = kDefaultRadius, double eps = kDefaultEps);

/// Sum of absolute differences between horizontal and vertical neighbours.
double total_variation(const rain::Image& img);

}  // namespace raincap::decomp
