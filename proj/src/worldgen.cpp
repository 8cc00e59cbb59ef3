// Copyright (c) 2026 ICVE Authors
// SPDX-License-Identifier: Apache-2.0
#include "icve/worldgen.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace icve::worldgen {

namespace {

const std::vector<std::pair<std::string, std::array<float, 3>>>& palette_table() {
  static const std::vector<std::pair<std::string, std::array<float, 3>>> table = {
      {"red", {0.85f, 0.10f, 0.10f}},    {"green", {0.10f, 0.70f, 0.15f}},
      {"blue", {0.15f, 0.25f, 0.85f}},   {"yellow", {0.95f, 0.90f, 0.15f}},
      {"purple", {0.55f, 0.15f, 0.75f}}, {"orange", {0.95f, 0.55f, 0.10f}},
      {"cyan", {0.10f, 0.80f, 0.85f}},   {"white", {0.95f, 0.95f, 0.95f}},
  };
  return table;
}

// Muted background colors, disjoint from the shape palette so removed
// shapes never blend into the fill behind them.
const std::vector<std::array<float, 3>>& background_table() {
  static const std::vector<std::array<float, 3>> table = {
      {0.08f, 0.10f, 0.30f}, {0.05f, 0.35f, 0.40f}, {0.35f, 0.08f, 0.12f},
      {0.30f, 0.33f, 0.08f}, {0.25f, 0.28f, 0.35f}, {0.35f, 0.22f, 0.10f},
      {0.07f, 0.28f, 0.12f}, {0.30f, 0.10f, 0.32f},
  };
  return table;
}

bool point_in_shape(const ShapeSpec& s, float cx, float cy, float px, float py) {
  const float size = static_cast<float>(s.size);
  switch (s.kind) {
    case ShapeKind::circle: {
      const float dx = px - cx, dy = py - cy;
      return dx * dx + dy * dy <= size * size;
    }
    case ShapeKind::square:
      return std::fabs(px - cx) <= size && std::fabs(py - cy) <= size;
    case ShapeKind::triangle: {
      // apex up: vertices (cx, cy-size), (cx±size, cy+size)
      if (py < cy - size || py > cy + size) return false;
      return std::fabs(px - cx) <= (py - (cy - size)) * 0.5f;
    }
  }
  return false;
}

float wrapf(float v, float m) {
  float r = std::fmod(v, m);
  return r < 0 ? r + m : r;
}

}  // namespace

const std::vector<std::string>& Palette::names() {
  static const std::vector<std::string> n = [] {
    std::vector<std::string> v;
    for (const auto& [name, rgb] : palette_table()) v.push_back(name);
    return v;
  }();
  return n;
}

std::array<float, 3> Palette::rgb(const std::string& name) {
  for (const auto& [n, c] : palette_table())
    if (n == name) return c;
  throw std::invalid_argument("unknown color: " + name);
}

bool Palette::valid(const std::string& name) {
  for (const auto& [n, c] : palette_table())
    if (n == name) return true;
  return false;
}

std::string kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::circle: return "circle";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
  }
  return "circle";
}

ShapeKind kind_from_name(const std::string& s) {
  if (s == "circle") return ShapeKind::circle;
  if (s == "square") return ShapeKind::square;
  if (s == "triangle") return ShapeKind::triangle;
  throw std::invalid_argument("unknown shape kind: " + s);
}

std::string style_name(Style s) {
  switch (s) {
    case Style::none: return "none";
    case Style::grayscale: return "grayscale";
    case Style::sepia: return "sepia";
    case Style::invert: return "invert";
  }
  return "none";
}

Style style_from_name(const std::string& s) {
  if (s == "none") return Style::none;
  if (s == "grayscale") return Style::grayscale;
  if (s == "sepia") return Style::sepia;
  if (s == "invert") return Style::invert;
  throw std::invalid_argument("unknown style: " + s);
}

std::array<float, 3> apply_style(Style s, std::array<float, 3> rgb) {
  switch (s) {
    case Style::none:
      return rgb;
    case Style::grayscale: {
      const float y = luma(rgb[0], rgb[1], rgb[2]);
      return {y, y, y};
    }
    case Style::sepia:
      // per-channel affine warm tint; strictly monotone, hence invertible
      return {0.62f * rgb[0] + 0.36f, 0.52f * rgb[1] + 0.26f, 0.40f * rgb[2] + 0.12f};
    case Style::invert:
      return {1.f - rgb[0], 1.f - rgb[1], 1.f - rgb[2]};
  }
  return rgb;
}

const ShapeSpec* SceneSpec::find(const std::string& id) const {
  for (const auto& s : shapes)
    if (s.id == id) return &s;
  return nullptr;
}

std::string edit_kind_name(EditOp::Kind k) {
  switch (k) {
    case EditOp::Kind::add: return "add";
    case EditOp::Kind::remove: return "remove";
    case EditOp::Kind::replace: return "replace";
    case EditOp::Kind::recolor: return "recolor";
    case EditOp::Kind::resize: return "resize";
    case EditOp::Kind::style: return "style";
  }
  return "remove";
}

EditOp::Kind edit_kind_from_name(const std::string& s) {
  if (s == "add") return EditOp::Kind::add;
  if (s == "remove") return EditOp::Kind::remove;
  if (s == "replace") return EditOp::Kind::replace;
  if (s == "recolor") return EditOp::Kind::recolor;
  if (s == "resize") return EditOp::Kind::resize;
  if (s == "style") return EditOp::Kind::style;
  throw std::invalid_argument("unknown edit kind: " + s);
}

GroundTruth GroundTruth::slice(int start, int end) const {
  if (start < 0 || end > t || start >= end) throw std::invalid_argument("GroundTruth::slice: bad range");
  GroundTruth out;
  out.t = end - start;
  out.h = h;
  out.w = w;
  out.style = style;
  out.frames.assign(frames.begin() + start, frames.begin() + end);
  const size_t frame = static_cast<size_t>(h) * w;
  out.owner.assign(owner.begin() + start * frame, owner.begin() + end * frame);
  return out;
}

bool GroundTruth::has_shape(const std::string& id) const {
  if (frames.empty()) return false;
  for (const auto& fs : frames[0])
    if (fs.id == id) return true;
  return false;
}

std::pair<VideoTensor, GroundTruth> render_scene(const SceneSpec& scene, int t, int h, int w,
                                                 uint64_t /*rng_seed*/) {
  if (t < 1) throw std::invalid_argument("render_scene: T must be >= 1");
  if (h % 4 != 0 || w % 4 != 0) throw std::invalid_argument("render_scene: H, W must be multiples of 4");
  if (static_cast<int>(scene.shapes.size()) > kMaxShapes)
    throw std::invalid_argument("render_scene: scene has more than 6 shapes");
  {
    std::set<std::string> ids;
    for (const auto& s : scene.shapes) {
      if (s.size < 2) throw std::invalid_argument("render_scene: shape size must be >= 2");
      if (!Palette::valid(s.color)) throw std::invalid_argument("render_scene: color outside palette");
      if (!ids.insert(s.id).second) throw std::invalid_argument("render_scene: duplicate shape id");
    }
  }

  VideoTensor video(t, h, w);
  GroundTruth gt;
  gt.t = t;
  gt.h = h;
  gt.w = w;
  gt.style = scene.style;
  gt.owner.assign(static_cast<size_t>(t) * h * w, -1);
  gt.frames.assign(t, {});

  const int n = static_cast<int>(scene.shapes.size());
  std::vector<std::array<float, 3>> shape_rgb(n);
  for (int i = 0; i < n; ++i) shape_rgb[i] = Palette::rgb(scene.shapes[i].color);

  for (int f = 0; f < t; ++f) {
    auto& fshapes = gt.frames[f];
    fshapes.resize(n);
    std::vector<float> cx(n), cy(n);
    for (int i = 0; i < n; ++i) {
      const auto& s = scene.shapes[i];
      cx[i] = s.x + f * (s.vx - scene.pan_x);
      cy[i] = s.y + f * (s.vy - scene.pan_y);
      fshapes[i] = {s.id, s.kind, s.color, s.size, cx[i], cy[i], false, 0.f, 0.f, 0};
    }
    for (int y = 0; y < h; ++y) {
      // gradient background pans with the camera; wrapped so panning stays
      // observable to motion estimation instead of saturating at the border
      std::array<float, 3> bg = scene.background.color;
      if (scene.background.gradient) {
        const float frac = wrapf(y + 0.5f + f * scene.pan_y, static_cast<float>(h)) / h;
        for (int c = 0; c < 3; ++c)
          bg[c] = scene.background.color[c] +
                  (scene.background.color2[c] - scene.background.color[c]) * frac;
      }
      for (int x = 0; x < w; ++x) {
        const float px = x + 0.5f, py = y + 0.5f;
        int top = -1;
        for (int i = n - 1; i >= 0; --i) {
          if (point_in_shape(scene.shapes[i], cx[i], cy[i], px, py)) {
            top = i;
            break;
          }
        }
        std::array<float, 3> rgb = top >= 0 ? shape_rgb[top] : bg;
        rgb = apply_style(scene.style, rgb);
        for (int c = 0; c < 3; ++c) video.at(f, y, x, c) = rgb[c];
        gt.owner[(static_cast<size_t>(f) * h + y) * w + x] = static_cast<int16_t>(top);
        if (top >= 0) {
          auto& fs = fshapes[top];
          fs.visible = true;
          fs.pixel_count += 1;
          fs.mask_cx += px;
          fs.mask_cy += py;
        }
      }
    }
    for (auto& fs : fshapes) {
      if (fs.pixel_count > 0) {
        fs.mask_cx /= fs.pixel_count;
        fs.mask_cy /= fs.pixel_count;
      }
    }
  }
  return {std::move(video), std::move(gt)};
}

SceneSpec apply_edit(const SceneSpec& scene, const EditOp& edit, int h, int w) {
  SceneSpec out = scene;
  switch (edit.kind) {
    case EditOp::Kind::add: {
      if (scene.find(edit.payload.id)) throw std::invalid_argument("apply_edit: add id already present");
      if (static_cast<int>(scene.shapes.size()) + 1 > kMaxShapes)
        throw std::invalid_argument("apply_edit: add exceeds shape budget");
      const auto& p = edit.payload;
      if (h > 0 && w > 0 &&
          (p.x - p.size < 0 || p.x + p.size > w || p.y - p.size < 0 || p.y + p.size > h))
        throw std::invalid_argument("apply_edit: added shape does not fit in frame");
      out.shapes.push_back(edit.payload);
      return out;
    }
    case EditOp::Kind::remove: {
      auto it = std::find_if(out.shapes.begin(), out.shapes.end(),
                             [&](const ShapeSpec& s) { return s.id == edit.target; });
      if (it == out.shapes.end()) throw std::invalid_argument("apply_edit: unknown target " + edit.target);
      out.shapes.erase(it);
      return out;
    }
    case EditOp::Kind::replace: {
      auto it = std::find_if(out.shapes.begin(), out.shapes.end(),
                             [&](const ShapeSpec& s) { return s.id == edit.target; });
      if (it == out.shapes.end()) throw std::invalid_argument("apply_edit: unknown target " + edit.target);
      *it = edit.payload;
      return out;
    }
    case EditOp::Kind::recolor: {
      auto it = std::find_if(out.shapes.begin(), out.shapes.end(),
                             [&](const ShapeSpec& s) { return s.id == edit.target; });
      if (it == out.shapes.end()) throw std::invalid_argument("apply_edit: unknown target " + edit.target);
      if (!Palette::valid(edit.color)) throw std::invalid_argument("apply_edit: bad color " + edit.color);
      it->color = edit.color;
      return out;
    }
    case EditOp::Kind::resize: {
      auto it = std::find_if(out.shapes.begin(), out.shapes.end(),
                             [&](const ShapeSpec& s) { return s.id == edit.target; });
      if (it == out.shapes.end()) throw std::invalid_argument("apply_edit: unknown target " + edit.target);
      it->size = std::max(2, static_cast<int>(std::llround(it->size * edit.size_factor)));
      return out;
    }
    case EditOp::Kind::style: {
      out.style = edit.style;
      return out;
    }
  }
  throw std::invalid_argument("apply_edit: bad edit kind");
}

std::pair<VideoTensor, std::vector<int>> render_raw_video(
    const std::vector<std::pair<SceneSpec, int>>& segments, int h, int w, uint64_t rng_seed) {
  if (segments.empty()) throw std::invalid_argument("render_raw_video: no segments");
  int total = 0;
  for (const auto& [scene, len] : segments) {
    if (len <= 0) throw std::invalid_argument("render_raw_video: zero-length segment");
    total += len;
  }
  VideoTensor video(total, h, w);
  std::vector<int> cuts;
  int at = 0;
  for (size_t i = 0; i < segments.size(); ++i) {
    const auto& [scene, len] = segments[i];
    if (i > 0) cuts.push_back(at);
    auto [seg, gt] = render_scene(scene, len, h, w, rng_seed);
    const size_t frame = static_cast<size_t>(h) * w * 3;
    std::copy(seg.data.begin(), seg.data.end(), video.data.begin() + at * frame);
    at += len;
  }
  return {std::move(video), std::move(cuts)};
}

MaskTensor object_mask(const GroundTruth& gt, const std::string& id) {
  int idx = -1;
  if (!gt.frames.empty()) {
    for (size_t i = 0; i < gt.frames[0].size(); ++i)
      if (gt.frames[0][i].id == id) idx = static_cast<int>(i);
  }
  if (idx < 0) throw std::invalid_argument("object_mask: unknown id " + id);
  MaskTensor m(gt.t, gt.h, gt.w);
  for (size_t i = 0; i < gt.owner.size(); ++i) m.data[i] = gt.owner[i] == idx ? 1 : 0;
  return m;
}

MaskTensor foreground_mask(const GroundTruth& gt) {
  MaskTensor m(gt.t, gt.h, gt.w);
  for (size_t i = 0; i < gt.owner.size(); ++i) m.data[i] = gt.owner[i] >= 0 ? 1 : 0;
  return m;
}

json scene_to_json(const SceneSpec& s) {
  json shapes = json::array();
  for (const auto& sh : s.shapes) {
    shapes.push_back({{"id", sh.id},
                      {"kind", kind_name(sh.kind)},
                      {"color", sh.color},
                      {"size", sh.size},
                      {"position", {sh.x, sh.y}},
                      {"velocity", {sh.vx, sh.vy}}});
  }
  json bg = {{"gradient", s.background.gradient},
             {"color", s.background.color}};
  if (s.background.gradient) bg["color2"] = s.background.color2;
  return {{"background", bg},
          {"shapes", shapes},
          {"camera_pan", {s.pan_x, s.pan_y}},
          {"style", style_name(s.style)}};
}

SceneSpec scene_from_json(const json& j) {
  SceneSpec s;
  const auto& bg = j.at("background");
  s.background.gradient = bg.at("gradient").get<bool>();
  s.background.color = bg.at("color").get<std::array<float, 3>>();
  if (s.background.gradient) s.background.color2 = bg.at("color2").get<std::array<float, 3>>();
  for (const auto& sh : j.at("shapes")) {
    ShapeSpec spec;
    spec.id = sh.at("id").get<std::string>();
    spec.kind = kind_from_name(sh.at("kind").get<std::string>());
    spec.color = sh.at("color").get<std::string>();
    spec.size = sh.at("size").get<int>();
    auto pos = sh.at("position").get<std::array<float, 2>>();
    auto vel = sh.at("velocity").get<std::array<float, 2>>();
    spec.x = pos[0];
    spec.y = pos[1];
    spec.vx = vel[0];
    spec.vy = vel[1];
    s.shapes.push_back(spec);
  }
  auto pan = j.at("camera_pan").get<std::array<float, 2>>();
  s.pan_x = pan[0];
  s.pan_y = pan[1];
  s.style = style_from_name(j.at("style").get<std::string>());
  return s;
}

json edit_to_json(const EditOp& e) {
  json j = {{"kind", edit_kind_name(e.kind)}};
  if (!e.target.empty()) j["target"] = e.target;
  switch (e.kind) {
    case EditOp::Kind::add:
    case EditOp::Kind::replace: {
      j["payload"] = {{"id", e.payload.id},
                      {"kind", kind_name(e.payload.kind)},
                      {"color", e.payload.color},
                      {"size", e.payload.size},
                      {"position", {e.payload.x, e.payload.y}},
                      {"velocity", {e.payload.vx, e.payload.vy}}};
      break;
    }
    case EditOp::Kind::recolor: j["color"] = e.color; break;
    case EditOp::Kind::resize: j["size_factor"] = e.size_factor; break;
    case EditOp::Kind::style: j["style"] = style_name(e.style); break;
    default: break;
  }
  return j;
}

EditOp edit_from_json(const json& j) {
  EditOp e;
  e.kind = edit_kind_from_name(j.at("kind").get<std::string>());
  if (j.contains("target")) e.target = j.at("target").get<std::string>();
  if (j.contains("payload")) {
    const auto& p = j.at("payload");
    e.payload.id = p.at("id").get<std::string>();
    e.payload.kind = kind_from_name(p.at("kind").get<std::string>());
    e.payload.color = p.at("color").get<std::string>();
    e.payload.size = p.at("size").get<int>();
    auto pos = p.at("position").get<std::array<float, 2>>();
    auto vel = p.at("velocity").get<std::array<float, 2>>();
    e.payload.x = pos[0];
    e.payload.y = pos[1];
    e.payload.vx = vel[0];
    e.payload.vy = vel[1];
  }
  if (j.contains("color")) e.color = j.at("color").get<std::string>();
  if (j.contains("size_factor")) e.size_factor = j.at("size_factor").get<double>();
  if (j.contains("style")) e.style = style_from_name(j.at("style").get<std::string>());
  return e;
}

SceneSpec random_scene(const SceneGenConfig& cfg, Rng& rng) {
  SceneSpec s;
  const auto& bgs = background_table();
  const int bi = static_cast<int>(rng.below(bgs.size()));
  s.background.color = bgs[bi];
  if (rng.chance(0.5)) {
    s.background.gradient = true;
    int b2 = static_cast<int>(rng.below(bgs.size() - 1));
    if (b2 >= bi) b2 += 1;
    s.background.color2 = bgs[b2];
  }

  const bool is_static = rng.chance(cfg.static_prob);
  if (!is_static && rng.chance(cfg.pan_prob)) {
    if (rng.chance(0.5))
      s.pan_x = static_cast<float>(rng.range(-1, 1));
    else
      s.pan_y = static_cast<float>(rng.range(-1, 1));
  }

  const int n = static_cast<int>(rng.range(cfg.min_shapes, cfg.max_shapes));
  std::vector<std::pair<int, int>> combos;  // (color, kind)
  for (int c = 0; c < 8; ++c)
    for (int k = 0; k < 3; ++k) combos.push_back({c, k});
  rng.shuffle(combos);

  bool any_moving = false;
  for (int i = 0; i < n; ++i) {
    ShapeSpec sh;
    sh.id = "s" + std::to_string(i);
    int ci, ki;
    if (cfg.distinct_referents) {
      ci = combos[i].first;
      ki = combos[i].second;
    } else {
      ci = static_cast<int>(rng.below(8));
      ki = static_cast<int>(rng.below(3));
    }
    sh.color = Palette::names()[ci];
    sh.kind = static_cast<ShapeKind>(ki);
    const int max_size = std::max(3, std::min(cfg.h, cfg.w) / 5);
    sh.size = static_cast<int>(rng.range(3, max_size));
    sh.x = static_cast<float>(rng.range(sh.size + 1, cfg.w - sh.size - 2));
    sh.y = static_cast<float>(rng.range(sh.size + 1, cfg.h - sh.size - 2));
    if (!is_static) {
      sh.vx = static_cast<float>(rng.range(-2, 2));
      sh.vy = static_cast<float>(rng.range(-2, 2));
      if (sh.vx != 0 || sh.vy != 0) any_moving = true;
    }
    s.shapes.push_back(sh);
  }
  if (!is_static && !any_moving && !s.shapes.empty() && s.pan_x == 0 && s.pan_y == 0) {
    s.shapes[0].vx = 1;  // keep at least one motion source in moving scenes
    any_moving = true;
  }
  return s;
}

int default_add_size(int h, int w) {
  return std::max(2, static_cast<int>(std::llround(0.12 * std::min(h, w))));
}

std::pair<float, float> region_center(int row, int col, int h, int w) {
  return {(col + 0.5f) * w / 3.f, (row + 0.5f) * h / 3.f};
}

}  // namespace icve::worldgen
