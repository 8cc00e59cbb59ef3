// Copyright (c) 2026 ICVE Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "icve/grammar.hpp"
#include "icve/video.hpp"
#include "icve/worldgen.hpp"

#include "json.hpp"

namespace icve::eval {

using json = nlohmann::json;

// --- video-quality proxies ----------------------------------------------------

double temporal_flickering(const VideoTensor& v);  // T >= 2
double motion_smoothness(const VideoTensor& v);    // T >= 3
// Cosine similarity of 8x8-average-pooled region patches between adjacent
// frames; region given by mask (foreground) or its complement (background).
double region_consistency(const VideoTensor& v, const MaskTensor& mask, bool foreground);

struct VbenchProxies {
  double subject_consistency = 0;   // S_C
  double background_consistency = 0;  // B_C
  double motion_smoothness = 0;     // M_S
  double temporal_flickering = 0;   // T_F
};

VbenchProxies vbench_proxies(const VideoTensor& v, const MaskTensor& foreground);

// Mean 4-neighbor Laplacian magnitude; the sharpness reference statistic.
double high_frequency_energy(const VideoTensor& v);

// Peak signal-to-noise ratio over the masked (or complement) region across
// all frames; +inf for an identical or empty region.
double region_psnr(const VideoTensor& a, const VideoTensor& b, const MaskTensor& mask,
                   bool inside);

// --- one evaluation case --------------------------------------------------------

struct EvalCase {
  std::string case_id;
  worldgen::SceneSpec scene;
  worldgen::EditOp edit;
  std::string instruction;
  std::string edit_type;
  VideoTensor orig;
  MaskTensor dilated_mask;
  int t = 8, h = 32, w = 32;
  uint64_t seed = 0;
};

std::vector<EvalCase> load_eval_cases(const std::string& eval_dir);

// --- oracle judges ---------------------------------------------------------------

int score_from_psnr(double psnr_db);

// Expected post-edit render reconstructed from the instruction's canonical
// parse against the original scene.
std::pair<VideoTensor, worldgen::GroundTruth> expected_render(const EvalCase& c);

// I_F: region PSNR between the edited output and the expected render
// inside the expected edit region.
int judge_instruction_following(const VideoTensor& edited, const EvalCase& c);
// O_P: PSNR outside the dilated edit region between original and edited.
// `warned` reports the degenerate whole-frame-mask case.
int judge_preservation(const VideoTensor& orig, const VideoTensor& edited,
                       const MaskTensor& dilated, bool* warned = nullptr);
// E_Q: rubric over range violations, flicker, black regions and sharpness.
int judge_quality(const VideoTensor& edited, double corpus_median_hf);
// S_R component: yes iff I_F >= 4 and O_P >= 4.
bool judge_success(const VideoTensor& edited, const EvalCase& c);

// --- pluggable judge client --------------------------------------------------------

// Request/response wire schema for an external scoring service. Prompt
// template ids map to the verbatim texts under assets/prompts/.
struct JudgeRequest {
  std::string metric;  // instruction_following | original_preservation |
                       // editing_quality | success_ratio
  std::string instruction;
  std::string original_frames_ref;
  std::string edited_frames_ref;
  std::string prompt_template_id;

  json to_json() const;
};

class Judge {
 public:
  virtual ~Judge() = default;
  // nullopt means missing (timeout / protocol error); excluded from
  // aggregates with the miss counted.
  virtual std::optional<int> score(const std::string& metric, const EvalCase& c,
                                   const VideoTensor& edited) = 0;
  virtual std::optional<bool> success(const EvalCase& c, const VideoTensor& edited) = 0;
};

class OracleJudge final : public Judge {
 public:
  explicit OracleJudge(double corpus_median_hf) : corpus_median_hf_(corpus_median_hf) {}
  std::optional<int> score(const std::string& metric, const EvalCase& c,
                           const VideoTensor& edited) override;
  std::optional<bool> success(const EvalCase& c, const VideoTensor& edited) override;

 private:
  double corpus_median_hf_;
};

// HTTP client speaking the JudgeRequest schema (POST /judge, JSON body).
class HttpJudge final : public Judge {
 public:
  HttpJudge(std::string host, int port, std::string spool_dir, int timeout_s = 5);
  std::optional<int> score(const std::string& metric, const EvalCase& c,
                           const VideoTensor& edited) override;
  std::optional<bool> success(const EvalCase& c, const VideoTensor& edited) override;

 private:
  std::optional<json> post(const JudgeRequest& req);
  std::string host_;
  int port_;
  std::string spool_dir_;
  int timeout_s_;
  int next_ref_ = 0;
};

// --- reports -----------------------------------------------------------------------

struct SampleResult {
  std::string case_id;
  std::string edit_type;
  std::optional<int> instruction_following, preservation, quality;
  std::optional<bool> success;
  VbenchProxies proxies;
};

struct MetricReport {
  std::vector<SampleResult> samples;
  double mean_if = 0, mean_op = 0, mean_eq = 0;
  double success_ratio = 0;  // percent
  double mean_sc = 0, mean_bc = 0, mean_ms = 0, mean_tf = 0;
  int missing = 0;

  json to_json() const;
};

MetricReport aggregate(std::vector<SampleResult> samples);

// Median high-frequency energy of the original videos in an eval set; the
// reference statistic for the sharpness check.
double corpus_median_hf(const std::vector<EvalCase>& cases);

// Evaluates a model adapter (case -> edited video) over the case list.
// Deterministic given the adapter; per-sample work is parallel.
MetricReport run_eval(const std::vector<EvalCase>& cases,
                      const std::function<VideoTensor(const EvalCase&)>& sample_fn, Judge& judge,
                      const std::string& outputs_dir = "");

}  // namespace icve::eval
