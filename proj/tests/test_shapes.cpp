#include <set>
#include <sstream>

#include "doctest.h"
#include "raincap/harness/shapes.hpp"

using namespace raincap::harness;

TEST_CASE("dataset generation is deterministic") {
  const auto a = gen_shapes_dataset(12, 7);
  const auto b = gen_shapes_dataset(12, 7);
  REQUIRE(a.size() == 12);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image.values == b[i].image.values);
    CHECK(a[i].depth.values == b[i].depth.values);
    CHECK(a[i].captions == b[i].captions);
  }
  CHECK(gen_shapes_dataset(1, 8)[0].image.values != a[0].image.values);
}

TEST_CASE("scenes respect their invariants") {
  for (const auto& r : gen_shapes_dataset(100, 3)) {
    const auto& sh = r.scene.shapes;
    CHECK(sh.size() >= 1);
    CHECK(sh.size() <= 3);
    std::set<std::pair<int, int>> centers;
    for (const auto& s : sh) centers.insert({s.cx, s.cy});
    CHECK(centers.size() == sh.size());
    CHECK(r.image.height == kSceneSize);
    CHECK(r.captions.size() == 5);
    for (float d : r.depth.values) {
      CHECK(d >= 0.0f);
      CHECK(d <= 1.0f);
    }
    CHECK(r.depth.at(0, 0) == 1.0f);
  }
}

TEST_CASE("every caption parses back to its scene") {
  for (const auto& r : gen_shapes_dataset(200, 11)) {
    for (const auto& c : r.captions) {
      const auto parsed = parse_caption(c);
      REQUIRE_MESSAGE(parsed.has_value(), c);
      CHECK_MESSAGE(caption_matches(*parsed, r.scene), c);
    }
  }
}

TEST_CASE("captions that contradict the scene are rejected") {
  ShapesScene scene;
  Shape a;
  a.cell = 0;
  a.color = 0;
  a.kind = ShapeKind::circle;
  Shape b;
  b.cell = 4;
  b.color = 2;
  b.kind = ShapeKind::square;
  scene.shapes = {a, b};
  CHECK(caption_matches(*parse_caption("a red circle above a blue square"), scene));
  CHECK(caption_matches(*parse_caption("a blue square below a red circle"), scene));
  CHECK_FALSE(caption_matches(*parse_caption("a red circle below a blue square"), scene));
  CHECK_FALSE(caption_matches(*parse_caption("a red square above a blue square"), scene));
  CHECK_FALSE(caption_matches(*parse_caption("a red circle"), scene));
  CHECK_FALSE(parse_caption("a red circle near a blue square").has_value());
  CHECK_FALSE(parse_caption("three shapes a red circle").has_value());
  CHECK_FALSE(parse_caption("").has_value());
}

TEST_CASE("200 scenes cover the whole vocabulary") {
  std::set<std::string> words;
  for (const auto& r : gen_shapes_dataset(200, 5))
    for (const auto& c : r.captions) {
      std::istringstream in(c);
      for (std::string w; in >> w;) words.insert(w);
    }
  for (auto c : kColorNames) CHECK(words.count(std::string(c)) == 1);
  for (auto s : kShapeNames) CHECK(words.count(std::string(s)) == 1);
  for (const char* w : {"above", "below", "left", "right", "of", "with", "and"}) CHECK(words.count(w) == 1);
  CHECK(words.size() <= 40);
}
