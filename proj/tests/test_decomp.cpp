#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "raincap/decomp/guided_filter.hpp"
#include "raincap/harness/shapes.hpp"

using namespace raincap;
using rain::Image;

namespace {

Image noisy_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  Image img(h, w);
  for (auto& v : img.values) v = static_cast<float>(d(rng));
  return img;
}

// Direct window average with clamped coordinates.
std::vector<double> window_mean(const std::vector<double>& p, int h, int w, int r) {
  std::vector<double> out(p.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
          acc += p[static_cast<std::size_t>(std::clamp(y + dy, 0, h - 1)) * w + std::clamp(x + dx, 0, w - 1)];
      out[static_cast<std::size_t>(y) * w + x] = acc / ((2 * r + 1) * (2 * r + 1));
    }
  return out;
}

}  // namespace

TEST_CASE("constant image passes through exactly") {
  for (float c : {0.0f, 0.37f, 1.0f, 1.3f}) {
    const Image img(24, 20, c);
    CHECK(decomp::guided_filter(img, 8, 0.01).values == img.values);
    for (float v : decomp::decompose(img).detail.values) CHECK(v == 0.0f);
  }
}

TEST_CASE("huge eps reduces to a twice box-filtered image") {
  const Image img = noisy_image(20, 24, 1);
  const Image out = decomp::guided_filter(img, 3, 1e6);
  const std::size_t n = img.plane_size();
  double worst = 0;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> p(img.values.begin() + c * n, img.values.begin() + (c + 1) * n);
    const auto twice = window_mean(window_mean(p, 20, 24, 3), 20, 24, 3);
    for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(out.values[c * n + i] - twice[i]));
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("box filter matches the direct window mean") {
  rain::Plane p(18, 19);
  std::mt19937_64 rng(2);
  for (auto& v : p.values) v = std::uniform_real_distribution<float>(0.0f, 1.0f)(rng);
  const rain::Plane out = decomp::box_filter(p, 4);
  const auto want = window_mean(std::vector<double>(p.values.begin(), p.values.end()), 18, 19, 4);
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(out.values[i] - want[i]) < 1e-6);
}

TEST_CASE("step edges are preserved") {
  Image step(32, 32, 0.0f);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 32; ++y)
      for (int x = 16; x < 32; ++x) step.at(c, y, x) = 1.0f;
  const Image out = decomp::guided_filter(step, 8, 1e-4);
  for (int y = 0; y < 32; ++y) CHECK(out.at(0, y, 16) - out.at(0, y, 15) > 0.95f);
}

TEST_CASE("base plus detail reproduces the input") {
  const auto data = harness::gen_shapes_dataset(10, 3);
  for (std::size_t k = 0; k < data.size(); ++k) {
    const auto s = rain::make_sample(data[k].image, data[k].depth, k);
    const auto bd = decomp::decompose(s.I);
    for (std::size_t i = 0; i < s.I.size(); ++i) CHECK(std::abs(bd.base.values[i] + bd.detail.values[i] - s.I.values[i]) <= 1e-7);
  }
}

TEST_CASE("base stays inside the input range") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Image img = noisy_image(32, 32, seed);
    const Image base = decomp::guided_filter(img);
    const std::size_t n = img.plane_size();
    for (int c = 0; c < 3; ++c) {
      const auto lo = *std::min_element(img.values.begin() + c * n, img.values.begin() + (c + 1) * n);
      const auto hi = *std::max_element(img.values.begin() + c * n, img.values.begin() + (c + 1) * n);
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(base.values[c * n + i] >= lo - 1e-6);
        CHECK(base.values[c * n + i] <= hi + 1e-6);
      }
    }
  }
}

TEST_CASE("filtering the base again changes it less") {
  const auto data = harness::gen_shapes_dataset(5, 4);
  for (std::size_t k = 0; k < data.size(); ++k) {
    const auto s = rain::make_sample(data[k].image, data[k].depth, 100 + k);
    const Image base = decomp::guided_filter(s.I);
    const Image again = decomp::guided_filter(base);
    const double first = decomp::total_variation(s.I) - decomp::total_variation(base);
    const double second = decomp::total_variation(base) - decomp::total_variation(again);
    CHECK(first > 0);
    CHECK(std::abs(second) < first);
  }
}

TEST_CASE("streaks over a smooth scene land mostly in the detail layer") {
  // Gray gradient scene: no object edges for the filter to preserve.
  Image J(64, 64);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) J.at(c, y, x) = 0.2f + 0.3f * static_cast<float>(y) / 63.0f;
  double share = 0;
  for (int k = 0; k < 20; ++k) {
    rain::DepthMap depth(64, 64);
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) depth.at(y, x) = static_cast<float>(x) / 63.0f;
    share += decomp::streak_energy_in_detail(rain::make_sample(J, depth, 300 + k));
  }
  CHECK(share / 20 >= 0.7);
}

TEST_CASE("invalid arguments") {
  CHECK_THROWS_AS(decomp::guided_filter(Image(10, 10), 8, 0.01), std::invalid_argument);
  CHECK_THROWS_AS(decomp::guided_filter(Image(32, 32), 0, 0.01), std::invalid_argument);
  CHECK_THROWS_AS(decomp::guided_filter(Image(32, 32), 2, 0.0), std::invalid_argument);
}
