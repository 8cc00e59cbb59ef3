// Copyright (c) 2026 ICVE Authors
// SPDX-License-Identifier: Apache-2.0
#include "icve/curation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "icve/grammar.hpp"
#include "icve/io.hpp"
#include "icve/parallel.hpp"
#include "icve/worldgen.hpp"

namespace icve::curation {

FilterDecision basic_filter(const VideoMeta& meta, int min_frames, int min_dim, double min_aspect,
                            double max_aspect) {
  if (meta.t < min_frames) return {false, "duration"};
  if (std::min(meta.h, meta.w) < min_dim) return {false, "resolution"};
  const double aspect = static_cast<double>(meta.w) / meta.h;
  if (aspect < min_aspect || aspect > max_aspect) return {false, "aspect"};
  return {true, ""};
}

std::vector<int> detect_scene_cuts(const VideoTensor& video, double threshold) {
  if (video.t < 2) throw std::invalid_argument("detect_scene_cuts: need at least 2 frames");
  const size_t frame = static_cast<size_t>(video.h) * video.w * 3;
  std::vector<double> diffs(video.t - 1);
  for (int t = 1; t < video.t; ++t) {
    double sum = 0;
    const float* a = video.data.data() + (t - 1) * frame;
    const float* b = video.data.data() + t * frame;
    for (size_t i = 0; i < frame; ++i) sum += std::fabs(b[i] - a[i]);
    diffs[t - 1] = sum / frame;
  }
  std::vector<double> sorted = diffs;
  std::sort(sorted.begin(), sorted.end());
  const size_t n = sorted.size();
  const double median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  std::vector<int> cuts;
  for (int t = 1; t < video.t; ++t) {
    if (diffs[t - 1] > threshold && diffs[t - 1] > 3.0 * median) cuts.push_back(t);
  }
  return cuts;
}

double motion_amplitude(const VideoTensor& v) {
  constexpr int kBlock = 8;
  constexpr int kSearch = 4;
  if (v.t < 2) throw std::invalid_argument("motion_amplitude: need at least 2 frames");
  if (v.h < kBlock || v.w < kBlock)
    throw std::invalid_argument("motion_amplitude: frame smaller than one block");
  const int by_n = v.h / kBlock, bx_n = v.w / kBlock;
  double total = 0;
  size_t count = 0;
  for (int f = 0; f + 1 < v.t; ++f) {
    for (int by = 0; by < by_n; ++by) {
      for (int bx = 0; bx < bx_n; ++bx) {
        const int y0 = by * kBlock, x0 = bx * kBlock;
        double best_sad = 0;
        int best_dx = 0, best_dy = 0;
        bool first = true;
        for (int dy = -kSearch; dy <= kSearch; ++dy) {
          for (int dx = -kSearch; dx <= kSearch; ++dx) {
            if (y0 + dy < 0 || y0 + dy + kBlock > v.h) continue;
            if (x0 + dx < 0 || x0 + dx + kBlock > v.w) continue;
            double sad = 0;
            for (int y = 0; y < kBlock; ++y)
              for (int x = 0; x < kBlock; ++x)
                for (int c = 0; c < 3; ++c)
                  sad += std::fabs(v.at(f, y0 + y, x0 + x, c) -
                                   v.at(f + 1, y0 + dy + y, x0 + dx + x, c));
            const int mag2 = dx * dx + dy * dy;
            const int best_mag2 = best_dx * best_dx + best_dy * best_dy;
            const bool better =
                first || sad < best_sad ||
                (sad == best_sad &&
                 (mag2 < best_mag2 ||
                  (mag2 == best_mag2 &&
                   (dx < best_dx || (dx == best_dx && dy < best_dy)))));
            if (better) {
              best_sad = sad;
              best_dx = dx;
              best_dy = dy;
              first = false;
            }
          }
        }
        total += std::sqrt(static_cast<double>(best_dx * best_dx + best_dy * best_dy));
        count += 1;
      }
    }
  }
  return total / count;
}

std::vector<std::pair<int, int>> split_clips(int start, int end, int clip_len) {
  if (clip_len < 1) throw std::invalid_argument("split_clips: clip_len must be >= 1");
  std::vector<std::pair<int, int>> clips;
  for (int s = start; s + clip_len <= end; s += clip_len) clips.push_back({s, s + clip_len});
  return clips;
}

std::pair<int, int> sample_clip_pair(int n_clips, Rng& rng) {
  if (n_clips < 2) throw std::invalid_argument("sample_clip_pair: need at least 2 clips");
  const uint64_t n = static_cast<uint64_t>(n_clips);
  // uniform over ordered pairs with i != j
  const uint64_t k = rng.below(n * (n - 1));
  const int i = static_cast<int>(k / (n - 1));
  int j = static_cast<int>(k % (n - 1));
  if (j >= i) j += 1;
  return {i, j};
}

json CurationStats::to_json() const {
  return {{"videos_in", videos_in},
          {"basic_rejected", basic_rejected},
          {"segments_total", segments_total},
          {"segments_low_motion", segments_low_motion},
          {"segments_too_short", segments_too_short},
          {"clips_total", clips_total},
          {"pairs_sampled", pairs_sampled},
          {"no_edit_dropped", no_edit_dropped},
          {"trivial_rejected", trivial_rejected},
          {"records_out", records_out}};
}

namespace {

struct PerVideoResult {
  std::vector<json> records;
  CurationStats stats;
};

// Ground truth for a clip range, reconstructed from the raw video's scene
// descriptions (positions at clip start become the local frame-0 state).
worldgen::GroundTruth clip_ground_truth(const json& gt_json, int h, int w, int start, int end) {
  for (const auto& seg : gt_json.at("segments")) {
    const int s0 = seg.at("start").get<int>();
    const int len = seg.at("len").get<int>();
    if (start >= s0 && end <= s0 + len) {
      auto scene = worldgen::scene_from_json(seg.at("scene"));
      auto [video, gt] = worldgen::render_scene(scene, len, h, w);
      return gt.slice(start - s0, end - s0);
    }
  }
  throw std::runtime_error("clip spans a ground-truth segment boundary");
}

PerVideoResult curate_video(const json& entry, const std::string& corpus_dir,
                            const CurationConfig& cfg) {
  PerVideoResult out;
  auto& st = out.stats;
  st.videos_in = 1;
  const std::string id = entry.at("id").get<std::string>();

  VideoMeta meta;
  meta.t = entry.at("t").get<int>();
  meta.h = entry.at("h").get<int>();
  meta.w = entry.at("w").get<int>();
  if (entry.contains("fps")) meta.fps = entry.at("fps").get<double>();
  const auto decision = basic_filter(meta, cfg.min_frames, cfg.min_dim);
  if (!decision.accept) {
    st.basic_rejected = 1;
    return out;
  }

  const std::string video_path = corpus_dir + "/" + entry.at("video").get<std::string>();
  const std::string gt_path = corpus_dir + "/" + entry.at("gt").get<std::string>();
  VideoTensor video;
  json gt_json;
  try {
    video = io::read_video(video_path);
    gt_json = io::read_json(gt_path);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("curation: ") + e.what());
  }

  auto cuts = detect_scene_cuts(video, cfg.cut_threshold);
  std::vector<int> bounds = {0};
  for (int c : cuts) bounds.push_back(c);
  bounds.push_back(video.t);

  Rng rng(derive_seed(cfg.seed, id));
  for (size_t si = 0; si + 1 < bounds.size(); ++si) {
    const int s0 = bounds[si], s1 = bounds[si + 1];
    st.segments_total += 1;
    if (s1 - s0 < 2) {
      st.segments_low_motion += 1;
      continue;
    }
    const double motion = motion_amplitude(slice_frames(video, s0, s1));
    if (motion < cfg.min_motion) {
      st.segments_low_motion += 1;
      continue;
    }
    auto clips = split_clips(s0, s1, cfg.clip_len);
    st.clips_total += static_cast<int>(clips.size());
    if (clips.size() < 2) {
      st.segments_too_short += 1;
      continue;
    }
    const uint64_t pair_seed = rng.next_u64();
    Rng pair_rng(pair_seed);
    auto [i, j] = sample_clip_pair(static_cast<int>(clips.size()), pair_rng);
    st.pairs_sampled += 1;

    worldgen::GroundTruth gt_a, gt_b;
    try {
      gt_a = clip_ground_truth(gt_json, video.h, video.w, clips[i].first, clips[i].second);
      gt_b = clip_ground_truth(gt_json, video.h, video.w, clips[j].first, clips[j].second);
    } catch (const std::runtime_error&) {
      st.no_edit_dropped += 1;  // detector disagreed with ground truth
      continue;
    }
    auto [instruction, edit_type] = grammar::describe_diff(gt_a, gt_b);
    if (instruction == grammar::kNoEdit) {
      st.no_edit_dropped += 1;
      continue;
    }
    if (!grammar::filter_trivial_accepts(instruction)) {
      st.trivial_rejected += 1;
      continue;
    }
    const std::string augmented = grammar::augment_instruction(instruction, pair_rng);

    const std::string segment_id = id + "#" + std::to_string(si);
    out.records.push_back({{"orig_path", entry.at("video").get<std::string>()},
                           {"orig_range", {clips[i].first, clips[i].second}},
                           {"edit_path", entry.at("video").get<std::string>()},
                           {"edit_range", {clips[j].first, clips[j].second}},
                           {"instruction", augmented},
                           {"edit_type", edit_type},
                           {"segment_id", segment_id},
                           {"seed", pair_seed}});
    st.records_out += 1;
  }
  return out;
}

}  // namespace

CurationStats build_pretrain_manifest(const std::string& corpus_dir, const std::string& out_dir,
                                      const CurationConfig& cfg) {
  const json index = io::read_json(corpus_dir + "/corpus_index.json");
  const auto& videos = index.at("videos");
  std::vector<PerVideoResult> results(videos.size());
  parallel_for(videos.size(),
               [&](size_t i) { results[i] = curate_video(videos[i], corpus_dir, cfg); });

  CurationStats stats;
  std::vector<json> records;
  for (const auto& r : results) {
    stats.videos_in += r.stats.videos_in;
    stats.basic_rejected += r.stats.basic_rejected;
    stats.segments_total += r.stats.segments_total;
    stats.segments_low_motion += r.stats.segments_low_motion;
    stats.segments_too_short += r.stats.segments_too_short;
    stats.clips_total += r.stats.clips_total;
    stats.pairs_sampled += r.stats.pairs_sampled;
    stats.no_edit_dropped += r.stats.no_edit_dropped;
    stats.trivial_rejected += r.stats.trivial_rejected;
    stats.records_out += r.stats.records_out;
    for (const auto& rec : r.records) records.push_back(rec);
  }
  io::ensure_dir(out_dir);
  io::write_jsonl(out_dir + "/pretrain_manifest.jsonl", records);
  io::write_json(out_dir + "/curation_stats.json", stats.to_json());
  return stats;
}

}  // namespace icve::curation
