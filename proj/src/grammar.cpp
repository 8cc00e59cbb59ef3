// Copyright (c) 2026 ICVE Authors
// SPDX-License-Identifier: Apache-2.0
#include "icve/grammar.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

namespace icve::grammar {

namespace {

const std::vector<std::string> kAddVerbs = {"add", "insert", "place"};
const std::vector<std::string> kRemoveVerbs = {"remove", "delete", "erase"};
const std::vector<std::string> kReplaceVerbs = {"replace", "change", "modify", "swap"};
const std::vector<std::string> kMoveVerbs = {"move", "shift"};
const std::vector<std::string> kRegions = {"top left",    "top",    "top right",
                                           "left",        "center", "right",
                                           "bottom left", "bottom", "bottom right"};
const std::vector<std::string> kDirections = {"leftwards", "rightwards", "upwards", "downwards"};
const std::vector<std::string> kBlocklist = {"brightness", "contrast", "saturation",
                                             "exposure", "sharpness"};

bool in_list(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

// Resolved id-keyed view of one ground truth used for diffing.
struct ShapeView {
  std::string id;
  ShapeKind kind;
  std::string color;
  int size;
  float cx0, cy0;      // analytic center at local frame 0
  float mcx, mcy;      // mean mask centroid over visible frames
  double mean_area;
  bool present;        // visible in at least one frame
};

std::map<std::string, ShapeView> view_of(const GroundTruth& gt) {
  std::map<std::string, ShapeView> out;
  if (gt.frames.empty()) return out;
  for (size_t i = 0; i < gt.frames[0].size(); ++i) {
    ShapeView v;
    v.id = gt.frames[0][i].id;
    v.kind = gt.frames[0][i].kind;
    v.color = gt.frames[0][i].color;
    v.size = gt.frames[0][i].size;
    v.cx0 = gt.frames[0][i].cx;
    v.cy0 = gt.frames[0][i].cy;
    double sx = 0, sy = 0, area = 0;
    int vis = 0;
    for (const auto& frame : gt.frames) {
      const auto& fs = frame[i];
      if (fs.visible) {
        sx += fs.mask_cx;
        sy += fs.mask_cy;
        area += fs.pixel_count;
        vis += 1;
      }
    }
    v.present = vis > 0;
    v.mcx = vis > 0 ? static_cast<float>(sx / vis) : v.cx0;
    v.mcy = vis > 0 ? static_cast<float>(sy / vis) : v.cy0;
    v.mean_area = area / gt.frames.size();
    out[v.id] = v;
  }
  return out;
}

std::string referent(const std::string& color, ShapeKind kind) {
  return color + " " + worldgen::kind_name(kind);
}

}  // namespace

std::string op_class_name(OpClass c) {
  switch (c) {
    case OpClass::add: return "add";
    case OpClass::remove: return "remove";
    case OpClass::replace: return "replace";
    case OpClass::recolor: return "recolor";
    case OpClass::resize: return "resize";
    case OpClass::style: return "style";
    case OpClass::move: return "move";
    case OpClass::no_edit: return "no_edit";
  }
  return "no_edit";
}

bool ParsedInstruction::canonically_equals(const ParsedInstruction& o) const {
  return op == o.op && color == o.color && kind == o.kind && color2 == o.color2 &&
         kind2 == o.kind2 && region == o.region && direction == o.direction &&
         size_word == o.size_word && style == o.style;
}

const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> vocab = [] {
    std::vector<std::string> v = {"PAD", kNoEdit};
    auto push = [&](const std::vector<std::string>& words) {
      for (const auto& w : words)
        if (!in_list(v, w)) v.push_back(w);
    };
    push(kAddVerbs);
    push(kRemoveVerbs);
    push(kReplaceVerbs);
    push(kMoveVerbs);
    push({"recolor", "resize", "apply"});
    push({"a", "the", "to", "with", "at", "be"});
    push({"circle", "square", "triangle"});
    for (const auto& c : worldgen::Palette::names()) push({c});
    push({"top", "bottom", "left", "right", "center"});
    push(kDirections);
    push({"bigger", "smaller"});
    push({"grayscale", "sepia", "invert", "style"});
    return v;
  }();
  return vocab;
}

int vocab_size() { return static_cast<int>(vocabulary().size()); }
int pad_id() { return 0; }

int token_id(const std::string& word) {
  const auto& v = vocabulary();
  auto it = std::find(v.begin(), v.end(), word);
  if (it == v.end()) throw std::invalid_argument("token outside grammar vocabulary: " + word);
  return static_cast<int>(it - v.begin());
}

std::vector<int> tokenize(const std::string& instruction) {
  auto words = split_words(instruction);
  if (static_cast<int>(words.size()) > kMaxInstructionTokens)
    throw std::invalid_argument("instruction longer than " + std::to_string(kMaxInstructionTokens) +
                                " tokens");
  std::vector<int> ids;
  for (const auto& w : words) ids.push_back(token_id(w));
  ids.resize(kMaxInstructionTokens, pad_id());
  return ids;
}

std::string region_name(float cx, float cy, int h, int w) {
  int col = std::clamp(static_cast<int>(3 * cx / w), 0, 2);
  int row = std::clamp(static_cast<int>(3 * cy / h), 0, 2);
  return kRegions[row * 3 + col];
}

std::pair<int, int> region_cell(const std::string& name) {
  for (int i = 0; i < 9; ++i)
    if (kRegions[i] == name) return {i / 3, i % 3};
  throw std::invalid_argument("unknown region: " + name);
}

double size_factor_for_word(const std::string& word) {
  if (word == "bigger") return 1.5;
  if (word == "smaller") return 0.5;
  throw std::invalid_argument("unknown size word: " + word);
}

namespace {

struct TokenCursor {
  const std::vector<std::string>& words;
  size_t i = 0;
  bool done() const { return i >= words.size(); }
  const std::string& peek() const {
    static const std::string empty;
    return done() ? empty : words[i];
  }
  std::string take() {
    if (done()) throw std::invalid_argument("instruction ended early");
    return words[i++];
  }
  void expect(const std::string& w) {
    if (take() != w) throw std::invalid_argument("expected '" + w + "' in instruction");
  }
};

std::string take_color(TokenCursor& c) {
  std::string w = c.take();
  if (!worldgen::Palette::valid(w)) throw std::invalid_argument("expected color, got '" + w + "'");
  return w;
}

std::string take_kind(TokenCursor& c) {
  std::string w = c.take();
  worldgen::kind_from_name(w);  // validates
  return w;
}

// region is one or two tokens: "center" / "top left" etc.
std::string take_region(TokenCursor& c) {
  std::string w = c.take();
  if ((w == "top" || w == "bottom") && !c.done() &&
      (c.peek() == "left" || c.peek() == "right")) {
    w += " " + c.take();
  }
  if (!in_list(kRegions, w)) throw std::invalid_argument("unknown region '" + w + "'");
  return w;
}

}  // namespace

ParsedInstruction parse(const std::string& instruction) {
  auto words = split_words(instruction);
  if (words.empty()) throw std::invalid_argument("empty instruction");
  if (words.size() == 1 && words[0] == kNoEdit) {
    ParsedInstruction p;
    p.op = OpClass::no_edit;
    return p;
  }
  TokenCursor c{words};
  ParsedInstruction p;
  p.verb = c.take();
  if (in_list(kAddVerbs, p.verb)) {
    p.op = OpClass::add;
    c.expect("a");
    p.color = take_color(c);
    p.kind = take_kind(c);
    c.expect("at");
    c.expect("the");
    p.region = take_region(c);
  } else if (in_list(kRemoveVerbs, p.verb)) {
    p.op = OpClass::remove;
    c.expect("the");
    p.color = take_color(c);
    p.kind = take_kind(c);
  } else if (in_list(kReplaceVerbs, p.verb)) {
    p.op = OpClass::replace;
    c.expect("the");
    p.color = take_color(c);
    p.kind = take_kind(c);
    c.expect("with");
    c.expect("a");
    p.color2 = take_color(c);
    p.kind2 = take_kind(c);
  } else if (in_list(kMoveVerbs, p.verb)) {
    p.op = OpClass::move;
    c.expect("the");
    p.color = take_color(c);
    p.kind = take_kind(c);
    if (c.peek() == "to") {
      c.expect("to");
      c.expect("the");
      p.region = take_region(c);
    } else {
      std::string d = c.take();
      if (!in_list(kDirections, d)) throw std::invalid_argument("unknown direction '" + d + "'");
      p.direction = d;
    }
  } else if (p.verb == "recolor") {
    p.op = OpClass::recolor;
    c.expect("the");
    p.color = take_color(c);
    p.kind = take_kind(c);
    c.expect("to");
    p.color2 = take_color(c);
  } else if (p.verb == "resize") {
    p.op = OpClass::resize;
    c.expect("the");
    p.color = take_color(c);
    p.kind = take_kind(c);
    c.expect("to");
    c.expect("be");
    std::string s = c.take();
    if (s != "bigger" && s != "smaller") throw std::invalid_argument("unknown size word '" + s + "'");
    p.size_word = s;
  } else if (p.verb == "apply") {
    p.op = OpClass::style;
    c.expect("the");
    std::string st = c.take();
    worldgen::style_from_name(st);  // validates; "none" also rejected below
    if (st == "none") throw std::invalid_argument("style 'none' is not an instruction");
    p.style = st;
    c.expect("style");
  } else {
    throw std::invalid_argument("unknown verb '" + p.verb + "'");
  }
  if (!c.done()) throw std::invalid_argument("trailing words in instruction");
  return p;
}

bool parses(const std::string& instruction) {
  try {
    parse(instruction);
    return true;
  } catch (const std::invalid_argument&) {
    return false;
  }
}

std::pair<std::string, std::string> describe_diff(const GroundTruth& a, const GroundTruth& b) {
  auto va = view_of(a);
  auto vb = view_of(b);

  std::vector<ShapeView> added, removed;
  for (const auto& [id, v] : vb)
    if (!va.count(id) && v.present) added.push_back(v);
  for (const auto& [id, v] : va)
    if (!vb.count(id) && v.present) removed.push_back(v);
  // shapes present in one clip's frames but fully off-screen in the other
  for (const auto& [id, v] : vb)
    if (va.count(id) && v.present && !va[id].present) added.push_back(v);
  for (const auto& [id, v] : va)
    if (vb.count(id) && v.present && !vb[id].present) removed.push_back(v);

  auto biggest = [](std::vector<ShapeView>& v) {
    std::sort(v.begin(), v.end(), [](const ShapeView& x, const ShapeView& y) {
      if (x.mean_area != y.mean_area) return x.mean_area > y.mean_area;
      return x.id < y.id;
    });
    return v.front();
  };

  // an add+remove pair occupying the same slot is a replacement
  if (added.size() == 1 && removed.size() == 1) {
    const auto& ad = added.front();
    const auto& rm = removed.front();
    if (std::fabs(ad.cx0 - rm.cx0) < 1e-4f && std::fabs(ad.cy0 - rm.cy0) < 1e-4f &&
        !va.count(ad.id) && !vb.count(rm.id)) {
      return {"replace the " + referent(rm.color, rm.kind) + " with a " + referent(ad.color, ad.kind),
              "replace"};
    }
  }
  if (!added.empty()) {
    const auto s = biggest(added);
    return {"add a " + referent(s.color, s.kind) + " at the " + region_name(s.mcx, s.mcy, b.h, b.w),
            "add"};
  }
  if (!removed.empty()) {
    const auto s = biggest(removed);
    return {"remove the " + referent(s.color, s.kind), "remove"};
  }

  // same id sets: attribute and motion differences, most significant first
  std::vector<std::pair<ShapeView, ShapeView>> common;
  for (const auto& [id, v] : va)
    if (vb.count(id)) common.push_back({v, vb[id]});
  std::sort(common.begin(), common.end(),
            [](const auto& x, const auto& y) { return x.first.id < y.first.id; });

  const ShapeView* best = nullptr;
  const ShapeView* best_b = nullptr;
  double best_area = -1;
  for (const auto& [sa, sb] : common) {
    if (sa.color != sb.color && sa.mean_area > best_area) {
      best = &sa;
      best_b = &sb;
      best_area = sa.mean_area;
    }
  }
  if (best) return {"recolor the " + referent(best->color, best->kind) + " to " + best_b->color,
                    "recolor"};

  best_area = -1;
  for (const auto& [sa, sb] : common) {
    if (sa.size != sb.size && sa.mean_area > best_area) {
      best = &sa;
      best_b = &sb;
      best_area = sa.mean_area;
    }
  }
  if (best) {
    const std::string word = best_b->size > best->size ? "bigger" : "smaller";
    return {"resize the " + referent(best->color, best->kind) + " to be " + word, "resize"};
  }

  if (a.style != b.style && b.style != Style::none) {
    return {"apply the " + worldgen::style_name(b.style) + " style", "style"};
  }

  double best_disp = 0.5;  // ignore sub-pixel jitter
  for (const auto& [sa, sb] : common) {
    const double d = std::hypot(sb.mcx - sa.mcx, sb.mcy - sa.mcy);
    if (d > best_disp) {
      best = &sa;
      best_b = &sb;
      best_disp = d;
    }
  }
  if (best) {
    const std::string ra = region_name(best->mcx, best->mcy, a.h, a.w);
    const std::string rb = region_name(best_b->mcx, best_b->mcy, b.h, b.w);
    if (ra != rb)
      return {"move the " + referent(best->color, best->kind) + " to the " + rb, "move"};
    const float dx = best_b->mcx - best->mcx, dy = best_b->mcy - best->mcy;
    std::string dir;
    if (std::fabs(dx) >= std::fabs(dy))
      dir = dx >= 0 ? "rightwards" : "leftwards";
    else
      dir = dy >= 0 ? "downwards" : "upwards";
    return {"move the " + referent(best->color, best->kind) + " " + dir, "move"};
  }

  return {kNoEdit, "no_edit"};
}

std::string instruction_for_edit(const SceneSpec& scene, const EditOp& edit, int h, int w) {
  using Kind = EditOp::Kind;
  auto target = [&]() -> const worldgen::ShapeSpec& {
    const auto* s = scene.find(edit.target);
    if (!s) throw std::invalid_argument("instruction_for_edit: unknown target " + edit.target);
    return *s;
  };
  switch (edit.kind) {
    case Kind::add:
      return "add a " + referent(edit.payload.color, edit.payload.kind) + " at the " +
             region_name(edit.payload.x, edit.payload.y, h, w);
    case Kind::remove:
      return "remove the " + referent(target().color, target().kind);
    case Kind::replace:
      return "replace the " + referent(target().color, target().kind) + " with a " +
             referent(edit.payload.color, edit.payload.kind);
    case Kind::recolor:
      return "recolor the " + referent(target().color, target().kind) + " to " + edit.color;
    case Kind::resize:
      return "resize the " + referent(target().color, target().kind) + " to be " +
             (edit.size_factor > 1.0 ? "bigger" : "smaller");
    case Kind::style:
      return "apply the " + worldgen::style_name(edit.style) + " style";
  }
  throw std::invalid_argument("instruction_for_edit: bad edit");
}

EditOp edit_from_instruction(const SceneSpec& scene, const ParsedInstruction& p, int h, int w) {
  EditOp e;
  auto unique_target = [&]() -> const worldgen::ShapeSpec& {
    const worldgen::ShapeSpec* found = nullptr;
    for (const auto& s : scene.shapes) {
      if (s.color == p.color && worldgen::kind_name(s.kind) == p.kind) {
        if (found) throw std::invalid_argument("ambiguous referent: " + p.color + " " + p.kind);
        found = &s;
      }
    }
    if (!found) throw std::invalid_argument("no such shape: " + p.color + " " + p.kind);
    return *found;
  };
  switch (p.op) {
    case OpClass::add: {
      e.kind = EditOp::Kind::add;
      worldgen::ShapeSpec sh;
      sh.id = "e0";
      int k = 0;
      while (scene.find(sh.id)) sh.id = "e" + std::to_string(++k);
      sh.kind = worldgen::kind_from_name(p.kind);
      sh.color = p.color;
      sh.size = worldgen::default_add_size(h, w);
      auto [row, col] = region_cell(p.region);
      auto [cx, cy] = worldgen::region_center(row, col, h, w);
      sh.x = cx;
      sh.y = cy;
      e.payload = sh;
      return e;
    }
    case OpClass::remove:
      e.kind = EditOp::Kind::remove;
      e.target = unique_target().id;
      return e;
    case OpClass::replace: {
      const auto& t = unique_target();
      e.kind = EditOp::Kind::replace;
      e.target = t.id;
      e.payload = t;
      e.payload.id = t.id + "r";
      e.payload.kind = worldgen::kind_from_name(p.kind2);
      e.payload.color = p.color2;
      return e;
    }
    case OpClass::recolor:
      e.kind = EditOp::Kind::recolor;
      e.target = unique_target().id;
      e.color = p.color2;
      return e;
    case OpClass::resize:
      e.kind = EditOp::Kind::resize;
      e.target = unique_target().id;
      e.size_factor = size_factor_for_word(p.size_word);
      return e;
    case OpClass::style:
      e.kind = EditOp::Kind::style;
      e.style = worldgen::style_from_name(p.style);
      return e;
    case OpClass::move:
    case OpClass::no_edit:
      throw std::invalid_argument("instruction has no scene-edit form: " +
                                  op_class_name(p.op));
  }
  throw std::invalid_argument("edit_from_instruction: bad op");
}

std::string augment_instruction(const std::string& instruction, Rng& rng) {
  const ParsedInstruction p = parse(instruction);  // throws if unparsable
  if (p.op == OpClass::no_edit) throw std::invalid_argument("cannot augment NO_EDIT");
  const std::vector<std::string>* synonyms = nullptr;
  switch (p.op) {
    case OpClass::add: synonyms = &kAddVerbs; break;
    case OpClass::remove: synonyms = &kRemoveVerbs; break;
    case OpClass::replace: synonyms = &kReplaceVerbs; break;
    case OpClass::move: synonyms = &kMoveVerbs; break;
    default: return instruction;  // recolor/resize/style verbs are fixed
  }
  const std::string verb = (*synonyms)[rng.below(synonyms->size())];
  auto words = split_words(instruction);
  words[0] = verb;
  std::string out = words[0];
  for (size_t i = 1; i < words.size(); ++i) out += " " + words[i];
  return out;
}

bool filter_trivial_accepts(const std::string& instruction) {
  const std::string low = lower(instruction);
  for (const auto& bad : kBlocklist)
    if (low.find(bad) != std::string::npos) return false;
  return true;
}

}  // namespace icve::grammar
