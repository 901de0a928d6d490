#include "raincap/harness/shapes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace raincap::harness {

namespace {

constexpr std::array<std::array<float, 3>, 8> kColorRgb{{
    {0.90f, 0.15f, 0.15f},  // red
    {0.15f, 0.80f, 0.20f},  // green
    {0.20f, 0.30f, 0.95f},  // blue
    {0.95f, 0.90f, 0.15f},  // yellow
    {0.15f, 0.85f, 0.90f},  // cyan
    {0.85f, 0.20f, 0.85f},  // magenta
    {0.95f, 0.95f, 0.95f},  // white
    {0.95f, 0.55f, 0.10f},  // orange
}};

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

bool inside(const Shape& s, int x, int y) {
  const double dx = x - s.cx, dy = y - s.cy, r = s.radius;
  switch (s.kind) {
    case ShapeKind::circle:
      return dx * dx + dy * dy <= r * r;
    case ShapeKind::square:
      return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
    case ShapeKind::triangle: {
      const double top = -r, bottom = 0.8 * r;
      if (dy < top || dy > bottom) return false;
      return std::abs(dx) <= (dy - top) / (bottom - top) * r;
    }
  }
  return false;
}

std::string phrase(const Shape& s) {
  return "a " + std::string(kColorNames[s.color]) + " " + std::string(kShapeNames[static_cast<int>(s.kind)]);
}

std::string relation_between(const Shape& a, const Shape& b, bool inverse) {
  const bool vertical = a.cell / 3 != b.cell / 3;
  if (vertical) return inverse ? "below" : "above";
  return inverse ? "right of" : "left of";
}

std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

bool relation_holds(const std::string& rel, const Shape& a, const Shape& b) {
  const int ra = a.cell / 3, rb = b.cell / 3, ca = a.cell % 3, cb = b.cell % 3;
  if (rel == "above") return ra < rb;
  if (rel == "below") return ra > rb;
  if (rel == "left of") return ra == rb && ca < cb;
  if (rel == "right of") return ra == rb && ca > cb;
  return false;
}

}  // namespace

ShapesScene random_scene(std::uint64_t seed) {
  std::mt19937_64 rng(mix(seed));
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  ShapesScene scene;
  scene.seed = seed;
  const auto g = static_cast<float>(uni(0.12, 0.30));
  scene.background = {g, g, g};
  const int n = pick(1, 3);
  std::array<int, 9> cells{};
  std::iota(cells.begin(), cells.end(), 0);
  for (int i = 0; i < n; ++i) std::swap(cells[i], cells[pick(i, 8)]);
  std::sort(cells.begin(), cells.begin() + n);
  const double pitch = kSceneSize / 3.0;
  for (int i = 0; i < n; ++i) {
    Shape s;
    s.cell = cells[i];
    s.kind = static_cast<ShapeKind>(pick(0, 2));
    s.color = pick(0, static_cast<int>(kColorNames.size()) - 1);
    s.radius = pick(6, 8);
    s.cx = static_cast<int>((s.cell % 3 + 0.5) * pitch) + pick(-2, 2);
    s.cy = static_cast<int>((s.cell / 3 + 0.5) * pitch) + pick(-2, 2);
    s.depth = static_cast<float>(uni(0.1, 0.6));
    scene.shapes.push_back(s);
  }
  return scene;
}

rain::Image render(const ShapesScene& scene) {
  rain::Image img(kSceneSize, kSceneSize);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < kSceneSize; ++y)
      for (int x = 0; x < kSceneSize; ++x) img.at(c, y, x) = scene.background[c];
  for (const auto& s : scene.shapes)
    for (int y = 0; y < kSceneSize; ++y)
      for (int x = 0; x < kSceneSize; ++x)
        if (inside(s, x, y))
          for (int c = 0; c < 3; ++c) img.at(c, y, x) = kColorRgb[s.color][c];
  return img;
}

rain::DepthMap render_depth(const ShapesScene& scene) {
  rain::DepthMap d(kSceneSize, kSceneSize, 1.0f);
  for (const auto& s : scene.shapes)
    for (int y = 0; y < kSceneSize; ++y)
      for (int x = 0; x < kSceneSize; ++x)
        if (inside(s, x, y)) d.at(y, x) = s.depth;
  return d;
}

std::vector<std::string> scene_captions(const ShapesScene& scene) {
  const auto& sh = scene.shapes;
  static constexpr std::array<std::string_view, 3> counts{"one shape ", "two shapes ", "three shapes "};
  std::string canonical, alternate;
  if (sh.size() == 1) {
    canonical = phrase(sh[0]);
    alternate = "one " + canonical.substr(2);
  } else if (sh.size() == 2) {
    canonical = phrase(sh[0]) + " " + relation_between(sh[0], sh[1], false) + " " + phrase(sh[1]);
    alternate = phrase(sh[1]) + " " + relation_between(sh[0], sh[1], true) + " " + phrase(sh[0]);
  } else {
    canonical = phrase(sh[0]) + " with " + phrase(sh[1]) + " and " + phrase(sh[2]);
    alternate = phrase(sh[2]) + " with " + phrase(sh[0]) + " and " + phrase(sh[1]);
  }
  return {canonical, "there is " + canonical, "a picture of " + canonical, alternate,
          std::string(counts[sh.size() - 1]) + canonical};
}

std::vector<ShapesRecord> gen_shapes_dataset(int count, std::uint64_t seed) {
  std::vector<ShapesRecord> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    ShapesRecord r;
    r.scene = random_scene(mix(seed) + static_cast<std::uint64_t>(i));
    r.image = render(r.scene);
    r.depth = render_depth(r.scene);
    r.captions = scene_captions(r.scene);
    out.push_back(std::move(r));
  }
  return out;
}

std::optional<ParsedCaption> parse_caption(std::string_view caption) {
  std::vector<std::string> w = split_words(caption);
  std::size_t pos = 0;
  std::optional<std::size_t> stated_count;
  auto eat = [&](std::initializer_list<std::string_view> words) {
    if (pos + words.size() > w.size()) return false;
    std::size_t k = pos;
    for (auto word : words)
      if (w[k++] != word) return false;
    pos = k;
    return true;
  };
  if (!eat({"there", "is"}) && !eat({"a", "picture", "of"})) {
    if (eat({"one", "shape"})) stated_count = 1;
    else if (eat({"two", "shapes"})) stated_count = 2;
    else if (eat({"three", "shapes"})) stated_count = 3;
  }
  auto object = [&](bool allow_one) -> std::optional<std::pair<int, ShapeKind>> {
    if (pos + 3 > w.size() || !(w[pos] == "a" || (allow_one && w[pos] == "one"))) return std::nullopt;
    const auto c = std::find(kColorNames.begin(), kColorNames.end(), w[pos + 1]);
    const auto k = std::find(kShapeNames.begin(), kShapeNames.end(), w[pos + 2]);
    if (c == kColorNames.end() || k == kShapeNames.end()) return std::nullopt;
    pos += 3;
    return std::pair{static_cast<int>(c - kColorNames.begin()), static_cast<ShapeKind>(k - kShapeNames.begin())};
  };

  ParsedCaption out;
  const bool bare = pos == 0;
  auto first = object(bare);
  if (!first) return std::nullopt;
  out.objects.push_back(*first);
  const bool said_one = bare && w[0] == "one";
  if (pos < w.size() && !said_one) {
    if (eat({"with"})) {
      auto second = object(false);
      if (!second || !eat({"and"})) return std::nullopt;
      auto third = object(false);
      if (!third) return std::nullopt;
      out.objects.push_back(*second);
      out.objects.push_back(*third);
    } else {
      if (eat({"above"})) out.relation = "above";
      else if (eat({"below"})) out.relation = "below";
      else if (eat({"left", "of"})) out.relation = "left of";
      else if (eat({"right", "of"})) out.relation = "right of";
      else return std::nullopt;
      auto second = object(false);
      if (!second) return std::nullopt;
      out.objects.push_back(*second);
    }
  }
  if (pos != w.size()) return std::nullopt;
  if (stated_count && *stated_count != out.objects.size()) return std::nullopt;
  return out;
}

bool caption_matches(const ParsedCaption& parsed, const ShapesScene& scene) {
  const auto& sh = scene.shapes;
  if (parsed.objects.size() != sh.size()) return false;
  std::vector<int> order(sh.size());
  std::iota(order.begin(), order.end(), 0);
  do {
    bool ok = true;
    for (std::size_t i = 0; i < order.size() && ok; ++i) {
      const Shape& s = sh[static_cast<std::size_t>(order[i])];
      ok = parsed.objects[i].first == s.color && parsed.objects[i].second == s.kind;
    }
    if (ok && !parsed.relation.empty())
      ok = relation_holds(parsed.relation, sh[static_cast<std::size_t>(order[0])], sh[static_cast<std::size_t>(order[1])]);
    if (ok) return true;
  } while (std::next_permutation(order.begin(), order.end()));
  return false;
}

}  // namespace raincap::harness
