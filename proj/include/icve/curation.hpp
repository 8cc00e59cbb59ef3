// Copyright (c) 2026 ICVE Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "icve/rng.hpp"
#include "icve/video.hpp"

#include "json.hpp"

namespace icve::curation {

using json = nlohmann::json;

struct VideoMeta {
  int t = 0, h = 0, w = 0;
  double fps = 12.0;
};

struct FilterDecision {
  bool accept = false;
  std::string reason;  // empty when accepted
};

// Duration / resolution / aspect gate.
FilterDecision basic_filter(const VideoMeta& meta, int min_frames = 16, int min_dim = 24,
                            double min_aspect = 0.5, double max_aspect = 2.0);

// Frame t is a cut iff the mean adjacent-frame difference exceeds the
// threshold AND 3x the median of all adjacent differences.
std::vector<int> detect_scene_cuts(const VideoTensor& video, double threshold);

// Block-matching flow proxy: 8x8 blocks, displacement search over [-4,4]^2
// minimizing SAD against the next frame; ties broken by smallest magnitude,
// then lexicographic (dx, dy); returns mean displacement magnitude.
double motion_amplitude(const VideoTensor& segment);

// Maximal non-overlapping [start + k*len, start + (k+1)*len) ranges.
std::vector<std::pair<int, int>> split_clips(int start, int end, int clip_len);

// Uniform ordered pair (i, j), i != j.
std::pair<int, int> sample_clip_pair(int n_clips, Rng& rng);

struct CurationConfig {
  double cut_threshold = 0.05;
  double min_motion = 0.25;  // pixels/frame
  int clip_len = 8;
  int min_frames = 16;
  int min_dim = 24;
  uint64_t seed = 0;
};

struct CurationStats {
  int videos_in = 0;
  int basic_rejected = 0;
  int segments_total = 0;
  int segments_low_motion = 0;
  int segments_too_short = 0;  // fewer than 2 clips
  int clips_total = 0;
  int pairs_sampled = 0;
  int no_edit_dropped = 0;
  int trivial_rejected = 0;
  int records_out = 0;

  json to_json() const;
};

// Runs the full pretraining pipeline over a worldgen corpus directory
// (corpus_index.json + per-video ICVE/JSON files); writes
// pretrain_manifest.jsonl and curation_stats.json into out_dir.
CurationStats build_pretrain_manifest(const std::string& corpus_dir, const std::string& out_dir,
                                      const CurationConfig& cfg);

}  // namespace icve::curation
