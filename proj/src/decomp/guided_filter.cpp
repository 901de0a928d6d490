#include "raincap/decomp/guided_filter.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace raincap::decomp {

namespace {

// Separable box mean in double, edge-replicated.
std::vector<double> box_mean(const std::vector<double>& src, int h, int w, int r) {
  const double norm = 1.0 / (2 * r + 1);
  std::vector<double> tmp(src.size()), out(src.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -r; k <= r; ++k) acc += src[static_cast<std::size_t>(y) * w + std::clamp(x + k, 0, w - 1)];
      tmp[static_cast<std::size_t>(y) * w + x] = acc * norm;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -r; k <= r; ++k) acc += tmp[static_cast<std::size_t>(std::clamp(y + k, 0, h - 1)) * w + x];
      out[static_cast<std::size_t>(y) * w + x] = acc * norm;
    }
  return out;
}

void check_args(int h, int w, int r, double eps) {
  if (r < 1) throw std::invalid_argument("guided filter radius must be >= 1");
  if (!(eps > 0.0)) throw std::invalid_argument("guided filter eps must be positive");
  if (h < 2 * r + 1 || w < 2 * r + 1)
    throw std::invalid_argument("image " + std::to_string(h) + "x" + std::to_string(w) + " smaller than window " +
                                std::to_string(2 * r + 1));
}

}  // namespace

rain::Plane box_filter(const rain::Plane& p, int r) {
  check_args(p.height, p.width, r, 1.0);
  std::vector<double> src(p.values.begin(), p.values.end());
  const auto m = box_mean(src, p.height, p.width, r);
  rain::Plane out(p.height, p.width);
  for (std::size_t i = 0; i < m.size(); ++i) out.values[i] = static_cast<float>(m[i]);
  return out;
}

rain::Image guided_filter(const rain::Image& p, int r, double eps) {
  check_args(p.height, p.width, r, eps);
  const int h = p.height, w = p.width;
  const std::size_t n = p.plane_size();
  rain::Image out(h, w);
  std::vector<double> ch(n), sq(n), a(n), b(n);
  for (int c = 0; c < rain::Image::channels; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      ch[i] = p.values[c * n + i];
      sq[i] = ch[i] * ch[i];
    }
    const auto mu = box_mean(ch, h, w, r);
    const auto corr = box_mean(sq, h, w, r);
    for (std::size_t i = 0; i < n; ++i) {
      const double var = std::max(0.0, corr[i] - mu[i] * mu[i]);
      a[i] = var / (var + eps);
      b[i] = (1.0 - a[i]) * mu[i];
    }
    const auto ma = box_mean(a, h, w, r);
    const auto mb = box_mean(b, h, w, r);
    for (std::size_t i = 0; i < n; ++i) out.values[c * n + i] = static_cast<float>(ma[i] * ch[i] + mb[i]);
  }
  return out;
}

BaseDetailPair decompose(const rain::Image& I, int r, double eps) {
  BaseDetailPair out{guided_filter(I, r, eps), rain::Image(I.height, I.width)};
  for (std::size_t i = 0; i < I.values.size(); ++i) out.detail.values[i] = I.values[i] - out.base.values[i];
  return out;
}

double streak_energy_in_detail(const rain::HeavyRainSample& s, int r, double eps) {
  const rain::Image clean = rain::compose_heavy_rain(s.J, {}, s.T, s.A);
  const rain::Image d_rain = decompose(s.I, r, eps).detail;
  const rain::Image d_clean = decompose(clean, r, eps).detail;
  const std::size_t n = s.J.plane_size();
  double dot = 0.0, energy = 0.0;
  for (int c = 0; c < rain::Image::channels; ++c)
    for (std::size_t i = 0; i < n; ++i) {
      const double streak = double(s.T.values[i]) * s.S_sum.values[i];
      const double d = double(d_rain.values[c * n + i]) - d_clean.values[c * n + i];
      dot += d * streak;
      energy += streak * streak;
    }
  return energy > 0.0 ? dot / energy : 0.0;
}

double total_variation(const rain::Image& img) {
  double tv = 0.0;
  for (int c = 0; c < rain::Image::channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        if (x + 1 < img.width) tv += std::abs(double(img.at(c, y, x + 1)) - img.at(c, y, x));
        if (y + 1 < img.height) tv += std::abs(double(img.at(c, y + 1, x)) - img.at(c, y, x));
      }
  return tv;
}

}  // namespace raincap::decomp
