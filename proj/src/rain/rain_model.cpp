#include "raincap/rain/rain_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace raincap::rain {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

void check_layers(std::span<const RainLayer> layers, int h, int w) {
  for (const auto& s : layers)
    require(s.height == h && s.width == w, "rain layer extent " + std::to_string(s.height) + "x" +
                                               std::to_string(s.width) + " does not match image " + std::to_string(h) +
                                               "x" + std::to_string(w));
}

}  // namespace

void StreakParams::validate() const {
  require(layers >= 1, "streak params: layer count must be >= 1");
  require(length >= 1, "streak params: length must be >= 1");
  require(density > 0.0 && density < 1.0, "streak params: density must lie in (0,1)");
  require(sigma > 0.0, "streak params: sigma must be positive");
  require(beta > 0.0, "streak params: beta must be positive");
  require(atmosphere > 0.0 && atmosphere <= 1.0, "streak params: atmosphere must lie in (0,1]");
}

void StreakRanges::validate() const {
  require(layers_min >= 1 && layers_min <= layers_max, "streak ranges: bad layer range");
  require(density_min > 0.0 && density_min <= density_max && density_max < 1.0, "streak ranges: bad density range");
  require(sigma_min > 0.0 && sigma_min <= sigma_max, "streak ranges: bad sigma range");
  require(length_min >= 1 && length_min <= length_max, "streak ranges: bad length range");
  require(angle_min <= angle_max, "streak ranges: bad angle range");
  require(atmosphere_min > 0.0 && atmosphere_min <= atmosphere_max && atmosphere_max <= 1.0,
          "streak ranges: bad atmosphere range");
  require(beta_min > 0.0 && beta_min <= beta_max, "streak ranges: bad beta range");
}

StreakParams StreakRanges::draw(std::uint64_t seed) const {
  validate();
  std::mt19937_64 rng(splitmix64(seed ^ 0x5EED5EED5EEDull));
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  StreakParams p;
  p.layers = pick(layers_min, layers_max);
  p.density = uni(density_min, density_max);
  p.sigma = uni(sigma_min, sigma_max);
  p.length = pick(length_min, length_max);
  p.angle_deg = uni(angle_min, angle_max);
  p.atmosphere = uni(atmosphere_min, atmosphere_max);
  p.beta = uni(beta_min, beta_max);
  return p;
}

std::uint64_t layer_seed(std::uint64_t sample_seed, int layer) {
  return splitmix64(splitmix64(sample_seed) + static_cast<std::uint64_t>(layer) + 1);
}

Plane line_kernel(int length, double angle_deg) {
  require(length >= 1, "line_kernel: length must be >= 1");
  const double rad = angle_deg * std::numbers::pi / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double half = (length - 1) / 2.0;
  std::vector<std::pair<int, int>> hits;
  const int steps = std::max(1, (length - 1) * 8);
  for (int i = 0; i <= steps; ++i) {
    const double t = length == 1 ? 0.0 : -half + (2.0 * half) * i / steps;
    // image rows grow downward, so a positive angle points up-right
    hits.emplace_back(static_cast<int>(std::floor(-t * s + 0.5)), static_cast<int>(std::floor(t * c + 0.5)));
  }
  int reach = 0;
  for (auto [dy, dx] : hits) reach = std::max({reach, std::abs(dy), std::abs(dx)});
  Plane k(2 * reach + 1, 2 * reach + 1);
  for (auto [dy, dx] : hits) k.at(dy + reach, dx + reach) = 1.0f;
  double total = 0.0;
  for (float v : k.values) total += v;
  for (float& v : k.values) v = static_cast<float>(v / total);
  return k;
}

RainLayer streak_seeds(std::uint64_t seed, const StreakParams& params, int h, int w) {
  params.validate();
  require(h > 0 && w > 0, "streak layer extents must be positive");
  RainLayer out(h, w);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, params.sigma);
  std::vector<float> v(out.size());
  for (auto& x : v) x = static_cast<float>(noise(rng));
  const auto keep = static_cast<std::size_t>(std::floor(params.density * static_cast<double>(v.size())));
  if (keep == 0) return out;
  std::vector<float> sorted = v;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(keep - 1), sorted.end(),
                   std::greater<float>());
  const float threshold = sorted[keep - 1];
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] >= threshold && v[i] > 0.0f) out.values[i] = v[i];
  return out;
}

RainLayer synth_streak_layer(std::uint64_t seed, const StreakParams& params, int h, int w) {
  const RainLayer seeds = streak_seeds(seed, params, h, w);
  const Plane k = line_kernel(params.length, params.angle_deg);
  const int reach = k.height / 2;
  RainLayer out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float v = seeds.at(y, x);
      if (v == 0.0f) continue;
      for (int dy = -reach; dy <= reach; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (int dx = -reach; dx <= reach; ++dx) {
          const int xx = x + dx;
          const float kv = k.at(dy + reach, dx + reach);
          if (xx < 0 || xx >= w || kv == 0.0f) continue;
          out.at(yy, xx) += v * kv;
        }
      }
    }
  for (float& v : out.values) v = std::max(v, 0.0f);
  return out;
}

TransmissionMap depth_to_transmission(const DepthMap& depth, double beta) {
  require(beta > 0.0, "depth_to_transmission: beta must be positive");
  TransmissionMap t(depth.height, depth.width);
  for (std::size_t i = 0; i < depth.size(); ++i) t.values[i] = static_cast<float>(std::exp(-beta * depth.values[i]));
  return t;
}

RainLayer sum_layers(std::span<const RainLayer> layers, int h, int w) {
  check_layers(layers, h, w);
  RainLayer total(h, w);
  for (const auto& s : layers)
    for (std::size_t i = 0; i < total.size(); ++i) total.values[i] += s.values[i];
  return total;
}

Image compose_streaks(const Image& J, std::span<const RainLayer> layers) {
  const RainLayer s = sum_layers(layers, J.height, J.width);
  Image r = J;
  const std::size_t n = J.plane_size();
  for (int c = 0; c < Image::channels; ++c)
    for (std::size_t i = 0; i < n; ++i) r.values[c * n + i] += s.values[i];
  return r;
}

Image compose_heavy_rain(const Image& J, std::span<const RainLayer> layers, const TransmissionMap& T,
                         const AtmosphericMap& A) {
  require(J.same_extent(T), "compose_heavy_rain: transmission extent does not match image");
  const Image r = compose_streaks(J, layers);
  Image out(J.height, J.width);
  const std::size_t n = J.plane_size();
  for (int c = 0; c < Image::channels; ++c)
    for (std::size_t i = 0; i < n; ++i) {
      const float t = T.values[i];
      out.values[c * n + i] = t * r.values[c * n + i] + (1.0f - t) * A.rgb[c];
    }
  return out;
}

Image invert_heavy_rain(const Image& I, const TransmissionMap& T, const AtmosphericMap& A, const RainLayer& S,
                        float t_min) {
  Image full(I.height, I.width);
  const std::size_t n = I.plane_size();
  for (int c = 0; c < Image::channels; ++c) std::fill_n(full.values.begin() + c * n, n, A.rgb[c]);
  return invert_heavy_rain(I, T, full, S, t_min);
}

Image invert_heavy_rain(const Image& I, const TransmissionMap& T, const Image& A, const RainLayer& S, float t_min) {
  require(I.same_extent(T) && I.same_extent(S) && I.same_extent(A), "invert_heavy_rain: extents differ");
  Image out(I.height, I.width);
  const std::size_t n = I.plane_size();
  for (int c = 0; c < Image::channels; ++c)
    for (std::size_t i = 0; i < n; ++i) {
      const float t = std::max(T.values[i], t_min);
      const std::size_t k = c * n + i;
      out.values[k] = (I.values[k] - (1.0f - t) * A.values[k]) / t - S.values[i];
    }
  return out;
}

HeavyRainSample make_sample(const Image& J, const DepthMap& depth, std::uint64_t seed, const StreakRanges& ranges) {
  require(J.same_extent(depth), "make_sample: depth extent does not match image");
  HeavyRainSample s;
  s.J = J;
  s.depth = depth;
  s.seed = seed;
  s.params = ranges.draw(seed);
  std::vector<RainLayer> layers;
  for (int i = 0; i < s.params.layers; ++i)
    layers.push_back(synth_streak_layer(layer_seed(seed, i), s.params, J.height, J.width));
  s.S_sum = sum_layers(layers, J.height, J.width);
  s.T = depth_to_transmission(depth, s.params.beta);
  const auto a = static_cast<float>(s.params.atmosphere);
  s.A.rgb = {a, a, a};
  s.I = compose_heavy_rain(J, layers, s.T, s.A);
  return s;
}

}  // namespace raincap::rain
