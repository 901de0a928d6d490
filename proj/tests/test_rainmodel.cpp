#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "raincap/harness/shapes.hpp"
#include "raincap/rain/rain_model.hpp"

using namespace raincap::rain;

namespace {

Image random_image(int h, int w, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Image img(h, w);
  for (auto& v : img.values) v = static_cast<float>(d(rng));
  return img;
}

RainLayer random_layer(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(0.0, 0.3);
  std::bernoulli_distribution on(0.2);
  RainLayer s(h, w);
  for (auto& v : s.values) v = on(rng) ? static_cast<float>(d(rng)) : 0.0f;
  return s;
}

double zero_fraction(const Plane& p) {
  int z = 0;
  for (float v : p.values) z += v == 0.0f;
  return double(z) / double(p.size());
}

}  // namespace

TEST_CASE("streak layers") {
  StreakParams p;
  p.density = 1e-6;
  CHECK(zero_fraction(synth_streak_layer(3, p, 64, 64)) == 1.0);

  p = StreakParams{};
  const RainLayer a = synth_streak_layer(42, p, 64, 64);
  const RainLayer b = synth_streak_layer(42, p, 64, 64);
  CHECK(a.values == b.values);
  CHECK(synth_streak_layer(43, p, 64, 64).values != a.values);
  for (float v : a.values) CHECK(v >= 0.0f);

  StreakParams bad;
  bad.density = 1.5;
  CHECK_THROWS_AS(synth_streak_layer(1, bad, 8, 8), std::invalid_argument);
  bad = StreakParams{};
  bad.length = 0;
  CHECK_THROWS_AS(synth_streak_layer(1, bad, 8, 8), std::invalid_argument);
}

TEST_CASE("line kernel") {
  for (int len : {1, 4, 9, 25}) {
    for (double angle : {0.0, 37.0, 90.0, 115.0}) {
      const Plane k = line_kernel(len, angle);
      double total = 0;
      for (float v : k.values) total += v;
      CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
  const Plane v = line_kernel(9, 90.0);
  CHECK(v.width == 9);
  for (int y = 0; y < v.height; ++y)
    for (int x = 0; x < v.width; ++x) CHECK((v.at(y, x) > 0) == (x == v.width / 2));
  const Plane h = line_kernel(9, 0.0);
  for (int y = 0; y < h.height; ++y)
    for (int x = 0; x < h.width; ++x) CHECK((h.at(y, x) > 0) == (y == h.height / 2));
}

TEST_CASE("vertical streaks are vertical runs and anisotropic") {
  StreakParams p;
  p.angle_deg = 90.0;
  p.length = 9;
  p.density = 0.01;
  const int n = 64;
  const RainLayer s = synth_streak_layer(5, p, n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      if (s.at(y, x) == 0.0f) continue;
      int top = y, bottom = y;
      while (top > 0 && s.at(top - 1, x) > 0) --top;
      while (bottom + 1 < n && s.at(bottom + 1, x) > 0) ++bottom;
      const bool clipped = top == 0 || bottom == n - 1;
      CHECK((bottom - top + 1 >= 9 || clipped));
    }
  double m = 0;
  for (float v : s.values) m += v;
  m /= double(s.size());
  double vert = 0, horiz = 0;
  for (int y = 0; y + 1 < n; ++y)
    for (int x = 0; x + 1 < n; ++x) {
      vert += (s.at(y, x) - m) * (s.at(y + 1, x) - m);
      horiz += (s.at(y, x) - m) * (s.at(y, x + 1) - m);
    }
  CHECK(vert / std::abs(horiz) > 3.0);
}

TEST_CASE("every layer drawn from the default ranges is at least 80% zeros") {
  const StreakRanges ranges;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const StreakParams p = ranges.draw(seed);
    for (int i = 0; i < p.layers; ++i) CHECK(zero_fraction(synth_streak_layer(layer_seed(seed, i), p, 64, 64)) >= 0.8);
  }
}

TEST_CASE("drawn parameters stay inside their ranges") {
  const StreakRanges r;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const StreakParams p = r.draw(seed);
    CHECK(p.layers >= r.layers_min);
    CHECK(p.layers <= r.layers_max);
    CHECK(p.density >= r.density_min);
    CHECK(p.density <= r.density_max);
    CHECK(p.length >= r.length_min);
    CHECK(p.length <= r.length_max);
    CHECK(p.angle_deg >= r.angle_min);
    CHECK(p.angle_deg <= r.angle_max);
    CHECK(p.atmosphere >= r.atmosphere_min);
    CHECK(p.atmosphere <= r.atmosphere_max);
    CHECK(p.beta >= r.beta_min);
    CHECK(p.beta <= r.beta_max);
  }
  StreakRanges bad;
  bad.length_min = 50;
  CHECK_THROWS_AS(bad.draw(1), std::invalid_argument);
}

TEST_CASE("depth to transmission") {
  DepthMap d(2, 3);
  d.values = {0.0f, 1.0f, 0.25f, 0.5f, 0.75f, 1.0f};
  const TransmissionMap t0 = depth_to_transmission(d, 1.3);
  CHECK(t0.values[0] == 1.0f);
  const TransmissionMap t = depth_to_transmission(d, std::log(2.0));
  CHECK(t.values[1] == doctest::Approx(0.5f).epsilon(1e-7));
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < d.size(); ++j)
      if (d.values[i] <= d.values[j]) CHECK(t.values[i] >= t.values[j]);
  for (float v : depth_to_transmission(DepthMap(4, 4, 1.0f), 2.0).values) {
    CHECK(v > 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK_THROWS_AS(depth_to_transmission(d, 0.0), std::invalid_argument);
}

TEST_CASE("compose streaks") {
  std::mt19937_64 rng(1);
  const Image J = random_image(8, 6, rng);
  CHECK(compose_streaks(J, {}).values == J.values);
  const std::vector<RainLayer> zero{RainLayer(8, 6)};
  CHECK(compose_streaks(J, zero).values == J.values);

  const std::vector<RainLayer> two{random_layer(8, 6, rng), random_layer(8, 6, rng)};
  const Image R = compose_streaks(J, two);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 6; ++x) CHECK(R.at(c, y, x) == J.at(c, y, x) + (0.0f + two[0].at(y, x) + two[1].at(y, x)));
  const std::vector<RainLayer> wrong{RainLayer(6, 8)};
  CHECK_THROWS_AS(compose_streaks(J, wrong), std::invalid_argument);
}

TEST_CASE("compose heavy rain") {
  std::mt19937_64 rng(2);
  const Image J = random_image(8, 8, rng);
  const std::vector<RainLayer> layers{random_layer(8, 8, rng)};
  const AtmosphericMap A{{0.8f, 0.85f, 0.9f}};
  CHECK(compose_heavy_rain(J, layers, TransmissionMap(8, 8, 1.0f), A).values == compose_streaks(J, layers).values);
  const Image veil = compose_heavy_rain(J, layers, TransmissionMap(8, 8, 1e-9f), A);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 64; ++i) CHECK(veil.values[c * 64 + i] == doctest::Approx(A.rgb[c]).epsilon(1e-6));

  const Image flat = compose_heavy_rain(Image(4, 4, 0.5f), {}, TransmissionMap(4, 4, 0.5f), AtmosphericMap{{0.8f, 0.8f, 0.8f}});
  for (float v : flat.values) CHECK(v == doctest::Approx(0.65f).epsilon(1e-7));
  CHECK_THROWS_AS(compose_heavy_rain(J, layers, TransmissionMap(8, 7, 1.0f), A), std::invalid_argument);
}

TEST_CASE("compose is affine in J") {
  std::mt19937_64 rng(3);
  const Image J1 = random_image(8, 8, rng), J2 = random_image(8, 8, rng);
  const std::vector<RainLayer> layers{random_layer(8, 8, rng)};
  TransmissionMap T(8, 8);
  for (auto& v : T.values) v = std::uniform_real_distribution<float>(0.1f, 1.0f)(rng);
  const AtmosphericMap A{{0.9f, 0.7f, 0.8f}};
  const float alpha = 0.3f;
  Image mix(8, 8);
  for (std::size_t i = 0; i < mix.size(); ++i) mix.values[i] = alpha * J1.values[i] + (1 - alpha) * J2.values[i];
  const Image lhs = compose_heavy_rain(mix, layers, T, A);
  const Image c1 = compose_heavy_rain(J1, layers, T, A), c2 = compose_heavy_rain(J2, layers, T, A);
  for (std::size_t i = 0; i < lhs.size(); ++i)
    CHECK(std::abs(lhs.values[i] - (alpha * c1.values[i] + (1 - alpha) * c2.values[i])) < 1e-6);
}

TEST_CASE("inverse") {
  std::mt19937_64 rng(4);
  const Image I = random_image(8, 8, rng);
  const Image same = invert_heavy_rain(I, TransmissionMap(8, 8, 1.0f), AtmosphericMap{}, RainLayer(8, 8));
  CHECK(same.values == I.values);

  // a zero transmission is clamped, never divided by
  const Image guarded = invert_heavy_rain(I, TransmissionMap(8, 8, 0.0f), AtmosphericMap{}, RainLayer(8, 8));
  CHECK(all_finite(guarded));
  const Image expect = invert_heavy_rain(I, TransmissionMap(8, 8, kTransmissionFloor), AtmosphericMap{}, RainLayer(8, 8));
  CHECK(guarded.values == expect.values);
}

TEST_CASE("round trip on 100 random samples") {
  std::mt19937_64 rng(5);
  double worst = 0;
  for (int k = 0; k < 100; ++k) {
    const Image J = random_image(16, 16, rng);
    DepthMap depth(16, 16);
    for (auto& v : depth.values) v = std::uniform_real_distribution<float>(0.0f, 1.0f)(rng);
    const HeavyRainSample s = make_sample(J, depth, static_cast<std::uint64_t>(k));
    const Image back = invert_heavy_rain(s.I, s.T, s.A, s.S_sum);
    for (std::size_t i = 0; i < J.values.size(); ++i)
      if (s.T.values[i % J.plane_size()] >= kTransmissionFloor)
        worst = std::max(worst, double(std::abs(back.values[i] - J.values[i])));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("make_sample") {
  const auto rec = raincap::harness::gen_shapes_dataset(1, 9).front();
  const HeavyRainSample a = make_sample(rec.image, rec.depth, 77);
  const HeavyRainSample b = make_sample(rec.image, rec.depth, 77);
  CHECK(a.I.values == b.I.values);
  CHECK(a.S_sum.values == b.S_sum.values);
  CHECK(a.T.values == b.T.values);
  CHECK(a.params.length == b.params.length);

  const std::vector<RainLayer> one{a.S_sum};
  CHECK(compose_heavy_rain(a.J, one, a.T, a.A).values == a.I.values);

  const std::size_t n = a.J.plane_size();
  for (std::size_t i = 0; i < n; ++i) {
    if (a.depth.values[i] != 1.0f) continue;
    const float t = a.T.values[i];
    for (int c = 0; c < 3; ++c) {
      const float r = a.J.values[c * n + i] + a.S_sum.values[i];
      CHECK(a.I.values[c * n + i] == t * r + (1.0f - t) * a.A.rgb[c]);
    }
  }
  CHECK_THROWS_AS(make_sample(rec.image, DepthMap(32, 32), 1), std::invalid_argument);
}

TEST_CASE("heavy rain washes out contrast") {
  const auto data = raincap::harness::gen_shapes_dataset(50, 21);
  int lower = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const HeavyRainSample s = make_sample(data[i].image, data[i].depth, 500 + i);
    lower += stddev(s.I) < stddev(s.J);
  }
  CHECK(lower >= 45);
}
