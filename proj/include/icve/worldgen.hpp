// Copyright (c) 2026 ICVE Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "icve/rng.hpp"
#include "icve/video.hpp"

#include "json.hpp"

namespace icve::worldgen {

using json = nlohmann::json;

enum class ShapeKind { circle, square, triangle };
enum class Style { none, grayscale, sepia, invert };

// Closed 8-name palette; referents in instructions are (color, kind) pairs.
struct Palette {
  static const std::vector<std::string>& names();
  static std::array<float, 3> rgb(const std::string& name);
  static bool valid(const std::string& name);
};

std::string kind_name(ShapeKind k);
ShapeKind kind_from_name(const std::string& s);
std::string style_name(Style s);
Style style_from_name(const std::string& s);

std::array<float, 3> apply_style(Style s, std::array<float, 3> rgb);

struct ShapeSpec {
  std::string id;
  ShapeKind kind = ShapeKind::circle;
  std::string color = "red";
  int size = 2;  // radius / half-extent in pixels
  float x = 0, y = 0;
  float vx = 0, vy = 0;
};

struct Background {
  bool gradient = false;
  std::array<float, 3> color{0.2f, 0.2f, 0.2f};   // solid, or gradient top
  std::array<float, 3> color2{0.2f, 0.2f, 0.2f};  // gradient bottom
};

struct SceneSpec {
  Background background;
  std::vector<ShapeSpec> shapes;  // later entries render on top
  float pan_x = 0, pan_y = 0;     // camera pan, pixels/frame
  Style style = Style::none;

  const ShapeSpec* find(const std::string& id) const;
};

constexpr int kMaxShapes = 6;

struct EditOp {
  enum class Kind { add, remove, replace, recolor, resize, style };
  Kind kind = Kind::remove;
  std::string target;           // shape id; empty for add/style
  ShapeSpec payload;            // add/replace
  std::string color;            // recolor
  double size_factor = 1.0;     // resize
  Style style = Style::none;    // style
};

std::string edit_kind_name(EditOp::Kind k);
EditOp::Kind edit_kind_from_name(const std::string& s);

// Resolved per-frame state of one shape.
struct FrameShape {
  std::string id;
  ShapeKind kind;
  std::string color;
  int size;
  float cx, cy;       // analytic center at this frame
  bool visible;       // at least one pixel topmost-visible
  float mask_cx, mask_cy;  // centroid of visible pixels (valid iff visible)
  int pixel_count;
};

// Exact per-frame scene graph plus the topmost-visibility ownership map.
struct GroundTruth {
  int t = 0, h = 0, w = 0;
  Style style = Style::none;
  std::vector<std::vector<FrameShape>> frames;  // [t][shape], scene order
  std::vector<int16_t> owner;                   // t*h*w, shape index or -1

  int16_t owner_at(int f, int y, int x) const {
    return owner[(static_cast<size_t>(f) * h + y) * w + x];
  }
  GroundTruth slice(int start, int end) const;
  bool has_shape(const std::string& id) const;
};

// --- core operations -------------------------------------------------------

// Deterministic hard-edged rasterizer. Shapes at position + t*velocity -
// t*camera_pan; gradient backgrounds pan with the camera (wrapped sampling);
// the style transform is applied last as a per-pixel color map.
std::pair<VideoTensor, GroundTruth> render_scene(const SceneSpec& scene, int t, int h, int w,
                                                 uint64_t rng_seed = 0);

// Frame dims are used to validate that an added shape's frame-0 bounding
// box lies fully inside the frame; pass 0,0 to skip that check.
SceneSpec apply_edit(const SceneSpec& scene, const EditOp& edit, int h, int w);

std::pair<VideoTensor, std::vector<int>> render_raw_video(
    const std::vector<std::pair<SceneSpec, int>>& segments, int h, int w, uint64_t rng_seed = 0);

MaskTensor object_mask(const GroundTruth& gt, const std::string& id);

// Union of every shape's mask (foreground); complement is background.
MaskTensor foreground_mask(const GroundTruth& gt);

// --- serialization ----------------------------------------------------------

json scene_to_json(const SceneSpec& s);
SceneSpec scene_from_json(const json& j);
json edit_to_json(const EditOp& e);
EditOp edit_from_json(const json& j);

// --- random generation ------------------------------------------------------

struct SceneGenConfig {
  int h = 32, w = 32;
  int min_shapes = 1, max_shapes = 4;
  double static_prob = 0.15;   // scene with all-zero motion
  double pan_prob = 0.25;
  bool distinct_referents = true;  // unique (color, kind) per scene
};

SceneSpec random_scene(const SceneGenConfig& cfg, Rng& rng);

// Default size for canonically added shapes: grammar-visible constant.
int default_add_size(int h, int w);

// Center of a 3x3 named-grid cell (row, col) in pixel coordinates.
std::pair<float, float> region_center(int row, int col, int h, int w);

}  // namespace icve::worldgen
