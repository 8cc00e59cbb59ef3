// Copyright (c) 2026 ICVE Authors
// SPDX-License-Identifier: Apache-2.0
#include "icve/sftdata.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include "icve/evaluate.hpp"
#include "icve/io.hpp"

namespace icve::sftdata {

using grammar::OpClass;
using grammar::ParsedInstruction;

std::vector<std::string> select_targets(const GroundTruth& gt) {
  std::vector<std::string> out;
  if (gt.frames.empty()) return out;
  const auto& first = gt.frames[0];
  for (size_t i = 0; i < first.size(); ++i) {
    bool unique = true;
    for (size_t j = 0; j < first.size(); ++j) {
      if (i != j && first[i].kind == first[j].kind && first[i].color == first[j].color) {
        unique = false;
        break;
      }
    }
    if (!unique) continue;
    int visible = 0;
    for (const auto& frame : gt.frames) visible += frame[i].visible ? 1 : 0;
    if (2 * visible >= gt.t) out.push_back(first[i].id);
  }
  return out;
}

bool area_filter(const MaskTensor& masks, double max_area_frac, double min_frame_frac) {
  if (masks.t < 1) throw std::invalid_argument("area_filter: empty mask");
  const double limit = max_area_frac * masks.h * masks.w;
  int ok = 0;
  for (int f = 0; f < masks.t; ++f)
    if (static_cast<double>(masks.area(f)) <= limit) ok += 1;
  return static_cast<double>(ok) / masks.t >= min_frame_frac;
}

std::pair<int, int> dilation_radius_range(int h) {
  // production-resolution 20..50 px band scaled by h/480, round half up
  const int lo = std::max(1, static_cast<int>(std::llround(20.0 * h / 480.0)));
  const int hi = std::max(lo, static_cast<int>(std::llround(50.0 * h / 480.0)));
  return {lo, hi};
}

MaskTensor dilate_masks_radius(const MaskTensor& m, int radius) {
  if (radius < 0) throw std::invalid_argument("dilate_masks_radius: negative radius");
  // Chebyshev dilation is separable: max-filter rows then columns
  MaskTensor tmp(m.t, m.h, m.w), out(m.t, m.h, m.w);
  for (int f = 0; f < m.t; ++f) {
    for (int y = 0; y < m.h; ++y) {
      for (int x = 0; x < m.w; ++x) {
        uint8_t v = 0;
        for (int d = -radius; d <= radius && !v; ++d) {
          const int xx = x + d;
          if (xx >= 0 && xx < m.w) v = m.at(f, y, xx);
        }
        tmp.at(f, y, x) = v;
      }
    }
    for (int y = 0; y < m.h; ++y) {
      for (int x = 0; x < m.w; ++x) {
        uint8_t v = 0;
        for (int d = -radius; d <= radius && !v; ++d) {
          const int yy = y + d;
          if (yy >= 0 && yy < m.h) v = tmp.at(f, yy, x);
        }
        out.at(f, y, x) = v;
      }
    }
  }
  return out;
}

MaskTensor dilate_masks(const MaskTensor& masks, Rng& rng) {
  auto [lo, hi] = dilation_radius_range(masks.h);
  const int r = static_cast<int>(rng.range(lo, hi));
  return dilate_masks_radius(masks, r);
}

VideoTensor make_masked_video(const VideoTensor& video, const MaskTensor& masks) {
  if (video.t != masks.t || video.h != masks.h || video.w != masks.w)
    throw std::invalid_argument("make_masked_video: shape mismatch");
  VideoTensor out = video;
  for (size_t i = 0; i < masks.data.size(); ++i) {
    if (masks.data[i]) {
      out.data[i * 3] = 0.f;
      out.data[i * 3 + 1] = 0.f;
      out.data[i * 3 + 2] = 0.f;
    }
  }
  return out;
}

VideoTensor inpaint_oracle(const SceneSpec& scene, const EditOp& edit, int t, int h, int w,
                           uint64_t seed, double p_fail, const MaskTensor* fail_region) {
  const SceneSpec edited = worldgen::apply_edit(scene, edit, h, w);
  auto [video, gt] = worldgen::render_scene(edited, t, h, w, seed);
  Rng rng(derive_seed(seed, "inpaint_fail"));
  if (p_fail > 0 && rng.chance(p_fail)) {
    MaskTensor region;
    if (fail_region) {
      region = *fail_region;
    } else {
      region = MaskTensor(t, h, w, 1);
    }
    video = make_masked_video(video, region);
  }
  return video;
}

namespace {

int instruction_accuracy(const std::string& instruction, const GroundTruth& gt_orig,
                         const GroundTruth& gt_expected) {
  ParsedInstruction given;
  try {
    given = grammar::parse(instruction);
  } catch (const std::invalid_argument&) {
    return 1;
  }
  if (given.op == OpClass::no_edit) return 1;
  const auto [ref_text, ref_type] = grammar::describe_diff(gt_orig, gt_expected);
  if (ref_text == grammar::kNoEdit) return 1;
  const ParsedInstruction ref = grammar::parse(ref_text);
  if (ref.canonically_equals(given)) return given.verb == ref.verb ? 5 : 4;
  if (ref.op == given.op && ref.color == given.color && ref.kind == given.kind) return 2;
  return 1;
}

}  // namespace

PairScores score_pair(const VideoTensor& orig, const VideoTensor& edited,
                      const std::string& instruction, const GroundTruth& gt_orig,
                      const GroundTruth& gt_expected, const MaskTensor* edit_region) {
  PairScores s;
  s.instruction_accuracy = instruction_accuracy(instruction, gt_orig, gt_expected);

  int quality = 5;
  bool black_frame = false;
  for (int f = 0; f < edited.t && !black_frame; ++f) {
    size_t region = 0, black = 0;
    for (int y = 0; y < edited.h; ++y) {
      for (int x = 0; x < edited.w; ++x) {
        if (edit_region && !edit_region->at(f, y, x)) continue;
        region += 1;
        if (luma(edited.at(f, y, x, 0), edited.at(f, y, x, 1), edited.at(f, y, x, 2)) < 0.02f)
          black += 1;
      }
    }
    if (region > 0 && 2 * black > region) black_frame = true;
  }
  if (black_frame) quality -= 3;

  bool out_of_range = false;
  for (float v : edited.data) {
    if (!std::isfinite(v) || v < 0.f || v > 1.f) {
      out_of_range = true;
      break;
    }
  }
  if (out_of_range) quality -= 1;

  if (edited.t >= 2 && eval::temporal_flickering(edited) < 0.90) quality -= 1;

  s.visual_quality = std::max(1, quality);
  // unused inputs kept for signature parity with the scoring contract
  (void)orig;
  return s;
}

std::vector<json> balance_types(const std::vector<json>& records,
                                const std::vector<std::string>& types, uint64_t seed,
                                bool* warned_empty) {
  std::map<std::string, std::vector<size_t>> buckets;
  for (const auto& t : types) buckets[t] = {};
  for (size_t i = 0; i < records.size(); ++i) {
    const std::string t = records[i].at("edit_type").get<std::string>();
    buckets[t].push_back(i);
  }
  size_t min_size = SIZE_MAX;
  for (const auto& t : types) min_size = std::min(min_size, buckets[t].size());
  if (warned_empty) *warned_empty = min_size == 0;
  if (min_size == 0) return {};

  std::set<size_t> keep;
  for (const auto& t : types) {
    auto idx = buckets[t];
    Rng rng(derive_seed(seed, "balance_" + t));
    rng.shuffle(idx);
    idx.resize(min_size);
    keep.insert(idx.begin(), idx.end());
  }
  std::vector<json> out;
  for (size_t i = 0; i < records.size(); ++i)
    if (keep.count(i)) out.push_back(records[i]);
  return out;
}

json SftStats::to_json() const {
  return {{"worlds", worlds},
          {"candidates", candidates},
          {"no_target", no_target},
          {"area_rejected", area_rejected},
          {"score_rejected", score_rejected},
          {"balanced_out", balanced_out},
          {"records_out", records_out},
          {"empty_type_warning", empty_type_warning}};
}

bool random_canonical_edit(const SceneSpec& scene, const GroundTruth& gt, int h, int w,
                           const std::string& type, Rng& rng, EditOp* out) {
  EditOp e;
  if (type == "add") {
    if (static_cast<int>(scene.shapes.size()) >= worldgen::kMaxShapes) return false;
    std::set<std::pair<std::string, std::string>> taken;
    for (const auto& s : scene.shapes) taken.insert({s.color, worldgen::kind_name(s.kind)});
    std::vector<std::pair<std::string, std::string>> combos;
    for (const auto& c : worldgen::Palette::names())
      for (const auto& k : {"circle", "square", "triangle"})
        if (!taken.count({c, k})) combos.push_back({c, k});
    if (combos.empty()) return false;
    const auto [color, kind] = combos[rng.below(combos.size())];
    e.kind = EditOp::Kind::add;
    worldgen::ShapeSpec sh;
    sh.id = "e0";
    int n = 0;
    while (scene.find(sh.id)) sh.id = "e" + std::to_string(++n);
    sh.kind = worldgen::kind_from_name(kind);
    sh.color = color;
    sh.size = worldgen::default_add_size(h, w);
    const int row = static_cast<int>(rng.below(3)), col = static_cast<int>(rng.below(3));
    auto [cx, cy] = worldgen::region_center(row, col, h, w);
    sh.x = cx;
    sh.y = cy;
    e.payload = sh;
    *out = e;
    return true;
  }
  if (type == "style") {
    e.kind = EditOp::Kind::style;
    const std::vector<worldgen::Style> styles = {worldgen::Style::grayscale,
                                                 worldgen::Style::sepia, worldgen::Style::invert};
    e.style = styles[rng.below(styles.size())];
    *out = e;
    return true;
  }
  auto targets = select_targets(gt);
  if (targets.empty()) return false;
  const std::string target = targets[rng.below(targets.size())];
  const auto* sh = scene.find(target);
  e.target = target;
  if (type == "remove") {
    e.kind = EditOp::Kind::remove;
  } else if (type == "recolor") {
    e.kind = EditOp::Kind::recolor;
    std::vector<std::string> others;
    for (const auto& c : worldgen::Palette::names())
      if (c != sh->color) others.push_back(c);
    e.color = others[rng.below(others.size())];
  } else if (type == "resize") {
    e.kind = EditOp::Kind::resize;
    e.size_factor = rng.chance(0.5) ? 1.5 : 0.5;
    if (sh->size <= 2 && e.size_factor < 1.0) e.size_factor = 1.5;  // keep the edit visible
  } else if (type == "replace") {
    e.kind = EditOp::Kind::replace;
    e.payload = *sh;
    e.payload.id = sh->id + "r";
    std::vector<std::string> kinds;
    for (const auto& k : {"circle", "square", "triangle"})
      if (k != worldgen::kind_name(sh->kind)) kinds.push_back(k);
    e.payload.kind = worldgen::kind_from_name(kinds[rng.below(kinds.size())]);
    // avoid creating a duplicate (color, kind) referent
    std::set<std::pair<std::string, std::string>> taken;
    for (const auto& s : scene.shapes)
      if (s.id != sh->id) taken.insert({s.color, worldgen::kind_name(s.kind)});
    std::vector<std::string> colors;
    for (const auto& c : worldgen::Palette::names())
      if (!taken.count({c, worldgen::kind_name(e.payload.kind)})) colors.push_back(c);
    if (colors.empty()) return false;
    e.payload.color = colors[rng.below(colors.size())];
  } else {
    throw std::invalid_argument("unknown edit type: " + type);
  }
  *out = e;
  return true;
}

namespace {

// Exact edit region: union of the target's masks before and after the edit.
MaskTensor exact_edit_region(const GroundTruth& gt_orig, const GroundTruth& gt_expected,
                             const EditOp& edit) {
  MaskTensor region(gt_orig.t, gt_orig.h, gt_orig.w);
  auto add_mask = [&](const GroundTruth& gt, const std::string& id) {
    if (!gt.has_shape(id)) return;
    const MaskTensor m = worldgen::object_mask(gt, id);
    for (size_t i = 0; i < region.data.size(); ++i) region.data[i] |= m.data[i];
  };
  switch (edit.kind) {
    case EditOp::Kind::add: add_mask(gt_expected, edit.payload.id); break;
    case EditOp::Kind::remove: add_mask(gt_orig, edit.target); break;
    case EditOp::Kind::replace:
      add_mask(gt_orig, edit.target);
      add_mask(gt_expected, edit.payload.id);
      break;
    case EditOp::Kind::recolor:
    case EditOp::Kind::resize:
      add_mask(gt_orig, edit.target);
      add_mask(gt_expected, edit.target);
      break;
    case EditOp::Kind::style:
      std::fill(region.data.begin(), region.data.end(), 1);
      break;
  }
  return region;
}

}  // namespace

SftStats build_sft_manifest(const std::string& out_dir, const SftConfig& cfg) {
  io::ensure_dir(out_dir);
  io::ensure_dir(out_dir + "/videos");
  io::ensure_dir(out_dir + "/masks");

  std::vector<std::string> types = {"add", "remove", "replace", "recolor", "resize"};
  if (cfg.include_style) types.push_back("style");

  SftStats stats;
  std::vector<json> retained;
  int next_id = 0;
  for (int wi = 0; wi < cfg.n_worlds; ++wi) {
    stats.worlds += 1;
    const uint64_t world_seed = derive_seed(cfg.seed, static_cast<uint64_t>(wi));
    Rng rng(world_seed);
    worldgen::SceneGenConfig scfg;
    scfg.h = cfg.h;
    scfg.w = cfg.w;
    const SceneSpec scene = worldgen::random_scene(scfg, rng);
    auto [orig, gt] = worldgen::render_scene(scene, cfg.t, cfg.h, cfg.w, world_seed);

    for (int ei = 0; ei < cfg.edits_per_world; ++ei) {
      const std::string type = types[rng.below(types.size())];
      EditOp edit;
      if (!random_canonical_edit(scene, gt, cfg.h, cfg.w, type, rng, &edit)) {
        stats.no_target += 1;
        continue;
      }
      const SceneSpec edited_scene = worldgen::apply_edit(scene, edit, cfg.h, cfg.w);
      auto [expected, gt_expected] =
          worldgen::render_scene(edited_scene, cfg.t, cfg.h, cfg.w, world_seed);

      const MaskTensor exact = exact_edit_region(gt, gt_expected, edit);
      if (edit.kind != EditOp::Kind::style && !area_filter(exact)) {
        stats.area_rejected += 1;
        continue;
      }
      MaskTensor dilated =
          edit.kind == EditOp::Kind::style ? exact : dilate_masks(exact, rng);

      VideoTensor edited;
      const uint64_t pair_seed = rng.next_u64();
      if (edit.kind == EditOp::Kind::style) {
        edited = expected;  // direct color transform, no inpainting seam
      } else {
        (void)make_masked_video(orig, dilated);  // inpainting input
        edited = inpaint_oracle(scene, edit, cfg.t, cfg.h, cfg.w, pair_seed, cfg.p_fail, &dilated);
      }
      const auto [instruction, edit_type] = grammar::describe_diff(gt, gt_expected);
      if (instruction == grammar::kNoEdit) {
        stats.no_target += 1;
        continue;
      }
      stats.candidates += 1;

      const PairScores scores = score_pair(orig, edited, instruction, gt, gt_expected, &dilated);
      if (scores.instruction_accuracy < cfg.min_score || scores.visual_quality < cfg.min_score) {
        stats.score_rejected += 1;
        continue;
      }

      char id[32];
      std::snprintf(id, sizeof(id), "%s_%05d", cfg.file_prefix.c_str(), next_id++);
      const std::string orig_rel = "videos/" + std::string(id) + "_orig.icve";
      const std::string edit_rel = "videos/" + std::string(id) + "_edit.icve";
      const std::string mask_rel = "masks/" + std::string(id) + "_mask.icve";
      io::write_video(out_dir + "/" + orig_rel, orig);
      io::write_video(out_dir + "/" + edit_rel, edited);
      io::write_mask(out_dir + "/" + mask_rel, dilated);
      retained.push_back({{"id", id},
                          {"orig_path", orig_rel},
                          {"edit_path", edit_rel},
                          {"mask_path", mask_rel},
                          {"instruction", instruction},
                          {"edit_type", edit_type},
                          {"instr_accuracy", scores.instruction_accuracy},
                          {"visual_quality", scores.visual_quality},
                          {"seed", pair_seed},
                          {"world_seed", world_seed}});
    }
  }

  std::vector<json> final_records = retained;
  if (cfg.balance) {
    bool warned = false;
    final_records = balance_types(retained, types, derive_seed(cfg.seed, "balance"), &warned);
    stats.empty_type_warning = warned;
    stats.balanced_out = static_cast<int>(retained.size() - final_records.size());
  }
  stats.records_out = static_cast<int>(final_records.size());
  io::write_jsonl(out_dir + "/" + cfg.manifest_name, final_records);
  io::write_json(out_dir + "/" + cfg.stats_name, stats.to_json());
  return stats;
}

int build_eval_manifest(const std::string& out_dir, const EvalGenConfig& cfg) {
  io::ensure_dir(out_dir);
  io::ensure_dir(out_dir + "/videos");
  io::ensure_dir(out_dir + "/masks");
  std::vector<json> rows;
  int made = 0;
  uint64_t attempt = 0;
  while (made < cfg.n_cases) {
    const std::string type = cfg.types[made % cfg.types.size()];
    const uint64_t case_seed = derive_seed(cfg.seed, attempt++);
    if (attempt > static_cast<uint64_t>(cfg.n_cases) * 64)
      throw std::runtime_error("build_eval_manifest: world generation stalled");
    Rng rng(case_seed);
    worldgen::SceneGenConfig scfg;
    scfg.h = cfg.h;
    scfg.w = cfg.w;
    const SceneSpec scene = worldgen::random_scene(scfg, rng);
    auto [orig, gt] = worldgen::render_scene(scene, cfg.t, cfg.h, cfg.w, case_seed);
    EditOp edit;
    if (!random_canonical_edit(scene, gt, cfg.h, cfg.w, type, rng, &edit)) continue;
    const SceneSpec edited_scene = worldgen::apply_edit(scene, edit, cfg.h, cfg.w);
    auto [expected, gt_expected] =
        worldgen::render_scene(edited_scene, cfg.t, cfg.h, cfg.w, case_seed);
    const MaskTensor exact = exact_edit_region(gt, gt_expected, edit);
    if (edit.kind != EditOp::Kind::style && !area_filter(exact)) continue;
    const MaskTensor dilated =
        edit.kind == EditOp::Kind::style ? exact : dilate_masks(exact, rng);
    const auto [instruction, edit_type] = grammar::describe_diff(gt, gt_expected);
    if (instruction == grammar::kNoEdit) continue;

    char id[32];
    std::snprintf(id, sizeof(id), "case_%04d", made);
    const std::string orig_rel = "videos/" + std::string(id) + "_orig.icve";
    const std::string mask_rel = "masks/" + std::string(id) + "_mask.icve";
    io::write_video(out_dir + "/" + orig_rel, orig);
    io::write_mask(out_dir + "/" + mask_rel, dilated);
    rows.push_back({{"case_id", id},
                    {"orig_path", orig_rel},
                    {"mask_path", mask_rel},
                    {"scene", worldgen::scene_to_json(scene)},
                    {"edit", worldgen::edit_to_json(edit)},
                    {"instruction", instruction},
                    {"edit_type", edit_type},
                    {"t", cfg.t},
                    {"h", cfg.h},
                    {"w", cfg.w},
                    {"seed", case_seed}});
    made += 1;
  }
  io::write_jsonl(out_dir + "/eval_manifest.jsonl", rows);
  return made;
}

}  // namespace icve::sftdata
