// Copyright (c) 2026 ICVE Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "icve/grammar.hpp"
#include "icve/rng.hpp"
#include "icve/video.hpp"
#include "icve/worldgen.hpp"

#include "json.hpp"

namespace icve::sftdata {

using json = nlohmann::json;
using worldgen::EditOp;
using worldgen::GroundTruth;
using worldgen::SceneSpec;

// Shapes that are uniquely describable (no other shape shares kind and
// color) and visible in at least half the frames.
std::vector<std::string> select_targets(const GroundTruth& gt);

// Accept iff the mask stays within half the frame area in >= 80% of frames.
bool area_filter(const MaskTensor& masks, double max_area_frac = 0.5, double min_frame_frac = 0.8);

// Chebyshev dilation with one radius drawn uniformly from the resolution-
// scaled range [round(20*h/480), round(50*h/480)], clamped to >= 1.
MaskTensor dilate_masks(const MaskTensor& masks, Rng& rng);
MaskTensor dilate_masks_radius(const MaskTensor& masks, int radius);
std::pair<int, int> dilation_radius_range(int h);

// Pixels under the mask are set to exactly zero in all channels.
VideoTensor make_masked_video(const VideoTensor& video, const MaskTensor& masks);

// Re-render oracle standing in for a learned inpainting model. With
// probability p_fail the dilated edit region is left black, emulating an
// inpainting failure that downstream scoring must reject.
VideoTensor inpaint_oracle(const SceneSpec& scene, const EditOp& edit, int t, int h, int w,
                           uint64_t seed, double p_fail, const MaskTensor* fail_region = nullptr);

struct PairScores {
  int instruction_accuracy = 1;  // 1..5
  int visual_quality = 1;        // 1..5
};

PairScores score_pair(const VideoTensor& orig, const VideoTensor& edited,
                      const std::string& instruction, const GroundTruth& gt_orig,
                      const GroundTruth& gt_expected, const MaskTensor* edit_region = nullptr);

// Down-samples each edit-type bucket to the smallest bucket, keeping
// relative order; `types` names the buckets that must exist (an absent
// type empties the result and sets the warning flag).
std::vector<json> balance_types(const std::vector<json>& records,
                                const std::vector<std::string>& types, uint64_t seed,
                                bool* warned_empty = nullptr);

struct SftConfig {
  int n_worlds = 400;
  int edits_per_world = 2;
  int t = 8, h = 32, w = 32;
  double p_fail = 0.1;
  int min_score = 5;          // keep threshold, both dimensions
  bool include_style = true;  // style edits synthesized as color transforms
  bool balance = true;
  uint64_t seed = 0;
  std::string manifest_name = "sft_manifest.jsonl";
  std::string stats_name = "sft_stats.json";
  std::string file_prefix = "sft";
};

struct SftStats {
  int worlds = 0;
  int candidates = 0;
  int no_target = 0;
  int area_rejected = 0;
  int score_rejected = 0;
  int balanced_out = 0;
  int records_out = 0;
  bool empty_type_warning = false;

  json to_json() const;
};

SftStats build_sft_manifest(const std::string& out_dir, const SftConfig& cfg);

// Held-out evaluation cases: canonical edits with stored scene, edit,
// instruction, original video, expected region mask.
struct EvalGenConfig {
  int n_cases = 48;
  int t = 8, h = 32, w = 32;
  uint64_t seed = 0;
  std::vector<std::string> types = {"add", "remove", "replace", "recolor", "resize", "style"};
};

int build_eval_manifest(const std::string& out_dir, const EvalGenConfig& cfg);

// Canonical random edit for a scene; returns false if the scene offers no
// valid target for any requested type.
bool random_canonical_edit(const SceneSpec& scene, const GroundTruth& gt, int h, int w,
                           const std::string& type, Rng& rng, EditOp* out);

}  // namespace icve::sftdata
