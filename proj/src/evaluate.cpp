// Copyright (c) 2026 ICVE Authors
// SPDX-License-Identifier: Apache-2.0
#include "icve/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "icve/io.hpp"
#include "icve/parallel.hpp"

#include "httplib.h"

namespace icve::eval {

double temporal_flickering(const VideoTensor& v) {
  if (v.t < 2) throw std::invalid_argument("temporal_flickering: need at least 2 frames");
  const size_t frame = static_cast<size_t>(v.h) * v.w * 3;
  double sum = 0;
  for (int t = 1; t < v.t; ++t) {
    const float* a = v.data.data() + (t - 1) * frame;
    const float* b = v.data.data() + t * frame;
    for (size_t i = 0; i < frame; ++i) sum += std::fabs(b[i] - a[i]);
  }
  const double mean = sum / (static_cast<double>(v.t - 1) * frame);
  return std::clamp(1.0 - mean, 0.0, 1.0);
}

double motion_smoothness(const VideoTensor& v) {
  if (v.t < 3) throw std::invalid_argument("motion_smoothness: need at least 3 frames");
  const size_t frame = static_cast<size_t>(v.h) * v.w * 3;
  double sum = 0;
  for (int t = 1; t + 1 < v.t; ++t) {
    const float* a = v.data.data() + (t - 1) * frame;
    const float* b = v.data.data() + t * frame;
    const float* c = v.data.data() + (t + 1) * frame;
    for (size_t i = 0; i < frame; ++i) sum += std::fabs(c[i] - 2.f * b[i] + a[i]) * 0.5;
  }
  const double mean = sum / (static_cast<double>(v.t - 2) * frame);
  return std::clamp(1.0 - mean, 0.0, 1.0);
}

namespace {

// 8x8 grid of masked channel means for one frame.
std::vector<double> pooled_patch(const VideoTensor& v, const MaskTensor& mask, bool foreground,
                                 int frame) {
  constexpr int kGrid = 8;
  std::vector<double> acc(kGrid * kGrid * 3, 0.0);
  std::vector<int> count(kGrid * kGrid, 0);
  for (int y = 0; y < v.h; ++y) {
    const int gy = std::min(kGrid - 1, y * kGrid / v.h);
    for (int x = 0; x < v.w; ++x) {
      const bool in = mask.at(frame, y, x) != 0;
      if (in != foreground) continue;
      const int gx = std::min(kGrid - 1, x * kGrid / v.w);
      const int cell = gy * kGrid + gx;
      count[cell] += 1;
      for (int c = 0; c < 3; ++c) acc[cell * 3 + c] += v.at(frame, y, x, c);
    }
  }
  for (int cell = 0; cell < kGrid * kGrid; ++cell) {
    if (count[cell] > 0)
      for (int c = 0; c < 3; ++c) acc[cell * 3 + c] /= count[cell];
  }
  return acc;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 && nb == 0) return 1.0;  // both regions empty / black
  if (na == 0 || nb == 0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

double region_consistency(const VideoTensor& v, const MaskTensor& mask, bool foreground) {
  if (v.t < 2) throw std::invalid_argument("region_consistency: need at least 2 frames");
  double sum = 0;
  auto prev = pooled_patch(v, mask, foreground, 0);
  for (int t = 1; t < v.t; ++t) {
    auto cur = pooled_patch(v, mask, foreground, t);
    sum += cosine(prev, cur);
    prev = std::move(cur);
  }
  return std::clamp(sum / (v.t - 1), 0.0, 1.0);
}

VbenchProxies vbench_proxies(const VideoTensor& v, const MaskTensor& foreground) {
  VbenchProxies p;
  p.temporal_flickering = temporal_flickering(v);
  p.motion_smoothness = motion_smoothness(v);
  p.subject_consistency = region_consistency(v, foreground, true);
  p.background_consistency = region_consistency(v, foreground, false);
  return p;
}

double high_frequency_energy(const VideoTensor& v) {
  double sum = 0;
  size_t count = 0;
  for (int f = 0; f < v.t; ++f) {
    for (int y = 1; y + 1 < v.h; ++y) {
      for (int x = 1; x + 1 < v.w; ++x) {
        for (int c = 0; c < 3; ++c) {
          const double lap = 4.0 * v.at(f, y, x, c) - v.at(f, y - 1, x, c) -
                             v.at(f, y + 1, x, c) - v.at(f, y, x - 1, c) - v.at(f, y, x + 1, c);
          sum += std::fabs(lap);
          count += 1;
        }
      }
    }
  }
  return count > 0 ? sum / count : 0.0;
}

double region_psnr(const VideoTensor& a, const VideoTensor& b, const MaskTensor& mask,
                   bool inside) {
  if (!a.same_shape(b)) throw std::invalid_argument("region_psnr: shape mismatch");
  double se = 0;
  size_t count = 0;
  for (int f = 0; f < a.t; ++f) {
    for (int y = 0; y < a.h; ++y) {
      for (int x = 0; x < a.w; ++x) {
        if ((mask.at(f, y, x) != 0) != inside) continue;
        for (int c = 0; c < 3; ++c) {
          const double d = a.at(f, y, x, c) - b.at(f, y, x, c);
          se += d * d;
          count += 1;
        }
      }
    }
  }
  if (count == 0) return std::numeric_limits<double>::infinity();
  const double mse = se / count;
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

std::vector<EvalCase> load_eval_cases(const std::string& eval_dir) {
  const auto rows = io::read_jsonl(eval_dir + "/eval_manifest.jsonl");
  std::vector<EvalCase> cases;
  for (const auto& r : rows) {
    EvalCase c;
    c.case_id = r.at("case_id").get<std::string>();
    c.scene = worldgen::scene_from_json(r.at("scene"));
    c.edit = worldgen::edit_from_json(r.at("edit"));
    c.instruction = r.at("instruction").get<std::string>();
    c.edit_type = r.at("edit_type").get<std::string>();
    c.t = r.at("t").get<int>();
    c.h = r.at("h").get<int>();
    c.w = r.at("w").get<int>();
    c.seed = r.at("seed").get<uint64_t>();
    c.orig = io::read_video(eval_dir + "/" + r.at("orig_path").get<std::string>());
    c.dilated_mask = io::read_mask(eval_dir + "/" + r.at("mask_path").get<std::string>());
    cases.push_back(std::move(c));
  }
  return cases;
}

int score_from_psnr(double psnr_db) {
  if (psnr_db >= 25.0) return 5;
  if (psnr_db >= 20.0) return 4;
  if (psnr_db >= 15.0) return 3;
  if (psnr_db >= 10.0) return 2;
  return 1;
}

std::pair<VideoTensor, worldgen::GroundTruth> expected_render(const EvalCase& c) {
  const auto parsed = grammar::parse(c.instruction);
  const auto edit = grammar::edit_from_instruction(c.scene, parsed, c.h, c.w);
  const auto edited_scene = worldgen::apply_edit(c.scene, edit, c.h, c.w);
  return worldgen::render_scene(edited_scene, c.t, c.h, c.w, c.seed);
}

namespace {

MaskTensor expected_edit_region(const EvalCase& c, const worldgen::GroundTruth& gt_expected) {
  MaskTensor region(c.t, c.h, c.w);
  auto [orig_video, gt_orig] = worldgen::render_scene(c.scene, c.t, c.h, c.w, c.seed);
  auto add_mask = [&](const worldgen::GroundTruth& gt, const std::string& id) {
    if (!gt.has_shape(id)) return;
    const MaskTensor m = worldgen::object_mask(gt, id);
    for (size_t i = 0; i < region.data.size(); ++i) region.data[i] |= m.data[i];
  };
  using Kind = worldgen::EditOp::Kind;
  const auto parsed = grammar::parse(c.instruction);
  const auto edit = grammar::edit_from_instruction(c.scene, parsed, c.h, c.w);
  switch (edit.kind) {
    case Kind::add: add_mask(gt_expected, edit.payload.id); break;
    case Kind::remove: add_mask(gt_orig, edit.target); break;
    case Kind::replace:
      add_mask(gt_orig, edit.target);
      add_mask(gt_expected, edit.payload.id);
      break;
    case Kind::recolor:
    case Kind::resize:
      add_mask(gt_orig, edit.target);
      add_mask(gt_expected, edit.target);
      break;
    case Kind::style: std::fill(region.data.begin(), region.data.end(), 1); break;
  }
  return region;
}

}  // namespace

int judge_instruction_following(const VideoTensor& edited, const EvalCase& c) {
  if (!grammar::parses(c.instruction))
    throw std::invalid_argument("judge_instruction_following: unparsable instruction");
  auto [expected, gt_expected] = expected_render(c);
  const MaskTensor region = expected_edit_region(c, gt_expected);
  return score_from_psnr(region_psnr(edited, expected, region, true));
}

int judge_preservation(const VideoTensor& orig, const VideoTensor& edited,
                       const MaskTensor& dilated, bool* warned) {
  if (!orig.same_shape(edited)) throw std::invalid_argument("judge_preservation: shape mismatch");
  const double psnr = region_psnr(orig, edited, dilated, false);
  if (std::isinf(psnr) && dilated.total_area() == dilated.data.size()) {
    if (warned) *warned = true;
    return 5;  // mask covers the whole frame; nothing left to rate
  }
  return score_from_psnr(psnr);
}

int judge_quality(const VideoTensor& edited, double corpus_median_hf) {
  int q = 5;
  bool bad_value = false;
  for (float v : edited.data) {
    if (!std::isfinite(v) || v < 0.f || v > 1.f) {
      bad_value = true;
      break;
    }
  }
  if (bad_value) q -= 1;
  if (edited.t >= 2 && temporal_flickering(edited) < 0.90) q -= 1;
  bool black_frame = false;
  const size_t frame_px = static_cast<size_t>(edited.h) * edited.w;
  for (int f = 0; f < edited.t && !black_frame; ++f) {
    size_t black = 0;
    for (int y = 0; y < edited.h; ++y)
      for (int x = 0; x < edited.w; ++x)
        if (luma(edited.at(f, y, x, 0), edited.at(f, y, x, 1), edited.at(f, y, x, 2)) < 0.02f)
          black += 1;
    if (2 * black > frame_px) black_frame = true;
  }
  if (black_frame) q -= 1;
  if (corpus_median_hf > 0 && high_frequency_energy(edited) > 3.0 * corpus_median_hf) q -= 1;
  return std::max(1, q);
}

bool judge_success(const VideoTensor& edited, const EvalCase& c) {
  const int i_f = judge_instruction_following(edited, c);
  if (i_f < 4) return false;
  const int o_p = judge_preservation(c.orig, edited, c.dilated_mask);
  return o_p >= 4;
}

json JudgeRequest::to_json() const {
  return {{"metric", metric},
          {"instruction", instruction},
          {"original_frames_ref", original_frames_ref},
          {"edited_frames_ref", edited_frames_ref},
          {"prompt_template_id", prompt_template_id}};
}

std::optional<int> OracleJudge::score(const std::string& metric, const EvalCase& c,
                                      const VideoTensor& edited) {
  if (metric == "instruction_following") return judge_instruction_following(edited, c);
  if (metric == "original_preservation") return judge_preservation(c.orig, edited, c.dilated_mask);
  if (metric == "editing_quality") return judge_quality(edited, corpus_median_hf_);
  throw std::invalid_argument("unknown metric: " + metric);
}

std::optional<bool> OracleJudge::success(const EvalCase& c, const VideoTensor& edited) {
  return judge_success(edited, c);
}

HttpJudge::HttpJudge(std::string host, int port, std::string spool_dir, int timeout_s)
    : host_(std::move(host)), port_(port), spool_dir_(std::move(spool_dir)),
      timeout_s_(timeout_s) {
  io::ensure_dir(spool_dir_);
}

std::optional<json> HttpJudge::post(const JudgeRequest& req) {
  httplib::Client client(host_, port_);
  client.set_connection_timeout(timeout_s_);
  client.set_read_timeout(timeout_s_);
  auto res = client.Post("/judge", req.to_json().dump(), "application/json");
  if (!res || res->status != 200) return std::nullopt;
  try {
    return json::parse(res->body);
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

std::optional<int> HttpJudge::score(const std::string& metric, const EvalCase& c,
                                    const VideoTensor& edited) {
  JudgeRequest req;
  req.metric = metric;
  req.instruction = c.instruction;
  req.original_frames_ref = spool_dir_ + "/" + c.case_id + "_orig.icve";
  req.edited_frames_ref = spool_dir_ + "/" + c.case_id + "_edit_" + std::to_string(next_ref_++) + ".icve";
  req.prompt_template_id = metric;
  io::write_video(req.original_frames_ref, c.orig);
  io::write_video(req.edited_frames_ref, edited);
  auto body = post(req);
  if (!body || !body->contains("score")) return std::nullopt;
  int score = 0;
  try {
    score = body->at("score").get<int>();
  } catch (const json::exception&) {
    return std::nullopt;
  }
  if (score < 1 || score > 5) return std::nullopt;  // protocol error
  return score;
}

std::optional<bool> HttpJudge::success(const EvalCase& c, const VideoTensor& edited) {
  JudgeRequest req;
  req.metric = "success_ratio";
  req.instruction = c.instruction;
  req.original_frames_ref = spool_dir_ + "/" + c.case_id + "_orig.icve";
  req.edited_frames_ref = spool_dir_ + "/" + c.case_id + "_edit_" + std::to_string(next_ref_++) + ".icve";
  req.prompt_template_id = "success_ratio";
  io::write_video(req.original_frames_ref, c.orig);
  io::write_video(req.edited_frames_ref, edited);
  auto body = post(req);
  if (!body || !body->contains("answer")) return std::nullopt;
  const std::string answer = body->at("answer").is_string()
                                 ? body->at("answer").get<std::string>()
                                 : std::string();
  if (answer == "yes") return true;
  if (answer == "no") return false;
  return std::nullopt;
}

json MetricReport::to_json() const {
  json samples_json = json::array();
  for (const auto& s : samples) {
    json row = {{"case_id", s.case_id},
                {"edit_type", s.edit_type},
                {"S_C", s.proxies.subject_consistency},
                {"B_C", s.proxies.background_consistency},
                {"M_S", s.proxies.motion_smoothness},
                {"T_F", s.proxies.temporal_flickering}};
    if (s.instruction_following) row["I_F"] = *s.instruction_following;
    if (s.preservation) row["O_P"] = *s.preservation;
    if (s.quality) row["E_Q"] = *s.quality;
    if (s.success) row["success"] = *s.success;
    samples_json.push_back(row);
  }
  return {{"samples", samples_json},
          {"aggregate",
           {{"I_F", mean_if},
            {"O_P", mean_op},
            {"E_Q", mean_eq},
            {"S_R_percent", success_ratio},
            {"S_C", mean_sc},
            {"B_C", mean_bc},
            {"M_S", mean_ms},
            {"T_F", mean_tf},
            {"missing", missing}}}};
}

MetricReport aggregate(std::vector<SampleResult> samples) {
  MetricReport r;
  r.samples = std::move(samples);
  int n_if = 0, n_op = 0, n_eq = 0, n_sr = 0, yes = 0;
  for (const auto& s : r.samples) {
    if (s.instruction_following) {
      r.mean_if += *s.instruction_following;
      n_if += 1;
    } else {
      r.missing += 1;
    }
    if (s.preservation) {
      r.mean_op += *s.preservation;
      n_op += 1;
    } else {
      r.missing += 1;
    }
    if (s.quality) {
      r.mean_eq += *s.quality;
      n_eq += 1;
    } else {
      r.missing += 1;
    }
    if (s.success) {
      yes += *s.success ? 1 : 0;
      n_sr += 1;
    } else if (!s.success.has_value()) {
      r.missing += 1;
    }
    r.mean_sc += s.proxies.subject_consistency;
    r.mean_bc += s.proxies.background_consistency;
    r.mean_ms += s.proxies.motion_smoothness;
    r.mean_tf += s.proxies.temporal_flickering;
  }
  const double n = static_cast<double>(r.samples.size());
  if (n_if) r.mean_if /= n_if;
  if (n_op) r.mean_op /= n_op;
  if (n_eq) r.mean_eq /= n_eq;
  if (n_sr) r.success_ratio = 100.0 * yes / n_sr;
  if (n > 0) {
    r.mean_sc /= n;
    r.mean_bc /= n;
    r.mean_ms /= n;
    r.mean_tf /= n;
  }
  return r;
}

double corpus_median_hf(const std::vector<EvalCase>& cases) {
  std::vector<double> values;
  for (const auto& c : cases) values.push_back(high_frequency_energy(c.orig));
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

MetricReport run_eval(const std::vector<EvalCase>& cases,
                      const std::function<VideoTensor(const EvalCase&)>& sample_fn, Judge& judge,
                      const std::string& outputs_dir) {
  if (cases.empty()) throw std::invalid_argument("run_eval: empty eval manifest");
  if (!outputs_dir.empty()) io::ensure_dir(outputs_dir);
  std::vector<VideoTensor> outputs(cases.size());
  parallel_for(cases.size(), [&](size_t i) { outputs[i] = sample_fn(cases[i]); });

  std::vector<SampleResult> results(cases.size());
  for (size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    const auto& edited = outputs[i];
    SampleResult s;
    s.case_id = c.case_id;
    s.edit_type = c.edit_type;
    s.instruction_following = judge.score("instruction_following", c, edited);
    s.preservation = judge.score("original_preservation", c, edited);
    s.quality = judge.score("editing_quality", c, edited);
    s.success = judge.success(c, edited);
    auto [exp_video, gt_expected] = expected_render(c);
    s.proxies = vbench_proxies(edited, worldgen::foreground_mask(gt_expected));
    results[i] = std::move(s);
    if (!outputs_dir.empty())
      io::write_video(outputs_dir + "/" + c.case_id + "_out.icve", edited);
  }
  return aggregate(std::move(results));
}

}  // namespace icve::eval
