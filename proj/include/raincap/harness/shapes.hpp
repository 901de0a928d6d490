#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "raincap/rain/image.hpp"

namespace raincap::harness {

enum class ShapeKind { circle, square, triangle };
inline constexpr std::array<std::string_view, 3> kShapeNames{"circle", "square", "triangle"};
inline constexpr std::array<std::string_view, 8> kColorNames{"red",     "green", "blue",  "yellow",
                                                            "cyan",    "magenta", "white", "orange"};

struct Shape {
  ShapeKind kind = ShapeKind::circle;
  int color = 0;  // index into kColorNames
  int cell = 0;   // 0..8, row-major in a 3x3 grid
  int cx = 0, cy = 0;
  int radius = 0;
  float depth = 0.5f;
};

struct ShapesScene {
  std::array<float, 3> background{0.2f, 0.2f, 0.2f};
  std::vector<Shape> shapes;  // ordered by cell
  std::uint64_t seed = 0;
};

struct ShapesRecord {
  ShapesScene scene;
  rain::Image image;
  rain::DepthMap depth;
  std::vector<std::string> captions;  // canonical caption first
};

inline constexpr int kSceneSize = 64;

ShapesScene random_scene(std::uint64_t seed);
rain::Image render(const ShapesScene& scene);
rain::DepthMap render_depth(const ShapesScene& scene);
/// Canonical caption followed by template variants; always 5 sentences.
std::vector<std::string> scene_captions(const ShapesScene& scene);

std::vector<ShapesRecord> gen_shapes_dataset(int count, std::uint64_t seed);

/// What a caption says about a scene.
struct ParsedCaption {
  std::vector<std::pair<int, ShapeKind>> objects;  // (color, kind) in mention order
  /// For two objects: "above", "below", "left of" or "right of" relating the
  /// first mention to the second; empty otherwise.
  std::string relation;
};

/// Inverse of the caption templates; nullopt when the sentence is not one of them.
std::optional<ParsedCaption> parse_caption(std::string_view caption);

/// True when `parsed` names exactly the scene's shapes and a relation that
/// holds between their grid cells.
bool caption_matches(const ParsedCaption& parsed, const ShapesScene& scene);

}  // namespace raincap::harness
