// Copyright (c) 2026 ICVE Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "icve/grammar.hpp"
#include "icve/rng.hpp"
#include "icve/video.hpp"

#include <Eigen/Dense>

namespace icve::model {

// --- fixed invertible "VAE": 2x2 spatial pixel rearrangement ----------------

template <class Real>
struct Latent {
  int t = 0, h = 0, w = 0;  // h, w are half the video dims; 12 channels
  std::vector<Real> v;

  static constexpr int kChannels = 12;
  size_t numel() const { return v.size(); }
  Real& at(int f, int y, int x, int c) {
    return v[((static_cast<size_t>(f) * h + y) * w + x) * kChannels + c];
  }
  Real at(int f, int y, int x, int c) const {
    return v[((static_cast<size_t>(f) * h + y) * w + x) * kChannels + c];
  }
};

template <class Real>
Latent<Real> encode_latent(const VideoTensor& video) {
  if (video.h % 2 != 0 || video.w % 2 != 0)
    throw std::invalid_argument("encode_latent: H, W must be even");
  Latent<Real> z;
  z.t = video.t;
  z.h = video.h / 2;
  z.w = video.w / 2;
  z.v.resize(static_cast<size_t>(z.t) * z.h * z.w * Latent<Real>::kChannels);
  for (int f = 0; f < z.t; ++f)
    for (int y = 0; y < z.h; ++y)
      for (int x = 0; x < z.w; ++x)
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            for (int c = 0; c < 3; ++c)
              z.at(f, y, x, (dy * 2 + dx) * 3 + c) =
                  static_cast<Real>(video.at(f, 2 * y + dy, 2 * x + dx, c));
  return z;
}

template <class Real>
VideoTensor decode_latent(const Latent<Real>& z) {
  VideoTensor video(z.t, z.h * 2, z.w * 2);
  for (int f = 0; f < z.t; ++f)
    for (int y = 0; y < z.h; ++y)
      for (int x = 0; x < z.w; ++x)
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            for (int c = 0; c < 3; ++c)
              video.at(f, 2 * y + dy, 2 * x + dx, c) =
                  static_cast<float>(z.at(f, y, x, (dy * 2 + dx) * 3 + c));
  return video;
}

// --- patchify: 2x2x1 latent patches -> 48-feature tokens --------------------

struct TokenCoord {
  int t, h, w;
};

constexpr int kPatchFeat = 48;  // 12 channels * 2 * 2

inline int video_token_count(int t, int h, int w) {
  // latent is (t, h/2, w/2, 12); patches are 2x2x1
  return t * (h / 4) * (w / 4);
}

template <class Real>
struct PatchTokens {
  int t = 0, ph = 0, pw = 0;  // patch-grid dims
  std::vector<Real> feat;     // n_tokens x kPatchFeat
  int count() const { return t * ph * pw; }
};

template <class Real>
PatchTokens<Real> patchify(const Latent<Real>& z) {
  if (z.h % 2 != 0 || z.w % 2 != 0)
    throw std::invalid_argument("patchify: latent spatial dims must be even");
  PatchTokens<Real> p;
  p.t = z.t;
  p.ph = z.h / 2;
  p.pw = z.w / 2;
  p.feat.resize(static_cast<size_t>(p.count()) * kPatchFeat);
  size_t k = 0;
  for (int f = 0; f < z.t; ++f)
    for (int y = 0; y < p.ph; ++y)
      for (int x = 0; x < p.pw; ++x) {
        Real* out = p.feat.data() + k * kPatchFeat;
        int i = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            for (int c = 0; c < Latent<Real>::kChannels; ++c)
              out[i++] = z.at(f, 2 * y + dy, 2 * x + dx, c);
        ++k;
      }
  return p;
}

template <class Real>
Latent<Real> unpatchify(const PatchTokens<Real>& p) {
  Latent<Real> z;
  z.t = p.t;
  z.h = p.ph * 2;
  z.w = p.pw * 2;
  z.v.resize(static_cast<size_t>(z.t) * z.h * z.w * Latent<Real>::kChannels);
  size_t k = 0;
  for (int f = 0; f < p.t; ++f)
    for (int y = 0; y < p.ph; ++y)
      for (int x = 0; x < p.pw; ++x) {
        const Real* in = p.feat.data() + k * kPatchFeat;
        int i = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            for (int c = 0; c < Latent<Real>::kChannels; ++c)
              z.at(f, 2 * y + dy, 2 * x + dx, c) = in[i++];
        ++k;
      }
  return z;
}

inline TokenCoord token_coord(int index, int ph, int pw) {
  const int per_frame = ph * pw;
  return {index / per_frame, (index % per_frame) / pw, index % pw};
}

// --- architecture ------------------------------------------------------------

struct ModelDims {
  int width = 128;
  int blocks = 4;
  int heads = 4;
  int mlp_ratio = 4;
  int text_len = grammar::kMaxInstructionTokens;
  int freq_dim = 64;  // sinusoidal timestep feature size
  int vocab = 0;      // filled from the grammar when 0

  int resolved_vocab() const { return vocab > 0 ? vocab : grammar::vocab_size(); }
};

template <class Real>
struct BlockParams {
  std::vector<Real> wq, bq, wk, bk, wv, bv, wo, bo;  // D x D (+ D)
  std::vector<Real> mlp_w1, mlp_b1, mlp_w2, mlp_b2;  // D x 4D, 4D x D
  std::vector<Real> mod_w, mod_b;                    // D x 6D, 6D
};

template <class Real>
struct Params {
  ModelDims dims;
  std::vector<Real> tok_emb;            // vocab x D
  std::vector<Real> patch_w, patch_b;   // 48 x D, D
  std::vector<Real> tmlp_w1, tmlp_b1;   // freq x D, D
  std::vector<Real> tmlp_w2, tmlp_b2;   // D x D, D
  std::vector<BlockParams<Real>> block;
  std::vector<Real> out_w, out_b;       // D x 48, 48

  // Deterministic named enumeration; drives checkpoints, Adam state and
  // parameter counting.
  void visit(const std::function<void(const std::string&, std::vector<Real>&)>& fn);
  size_t count() const;
};

// Random init (normal, std 0.02); the final output projection is exactly
// zero, which pins the freshly-initialized denoiser output to zero.
template <class Real>
Params<Real> init_params(const ModelDims& dims, uint64_t seed);

template <class Real>
struct Grads {
  Params<Real> p;  // same layout, accumulates gradients
};

// --- forward / backward --------------------------------------------------------

// Modulation vectors of one block for a given timestep embedding input.
template <class Real>
struct ModVectors {
  std::vector<Real> v;  // 6 x D: scale1, shift1, gate1, scale2, shift2, gate2
};

struct ForwardProbe {
  bool force_zero_time = false;           // all groups modulated at t = 0
  bool collect_block_inputs = false;      // capture per-block modulated inputs
  std::vector<std::vector<float>> block_inputs;  // per block, L x D
};

template <class Real>
struct Workspace;  // opaque scratch, reusable across calls

template <class Real>
Workspace<Real>* new_workspace();
template <class Real>
void free_workspace(Workspace<Real>*);

template <class Real>
class WorkspaceHandle {
 public:
  WorkspaceHandle() : ws_(new_workspace<Real>()) {}
  ~WorkspaceHandle() { free_workspace(ws_); }
  WorkspaceHandle(const WorkspaceHandle&) = delete;
  WorkspaceHandle& operator=(const WorkspaceHandle&) = delete;
  Workspace<Real>* get() const { return ws_; }

 private:
  Workspace<Real>* ws_;
};

// Predicted noise for the in-context sequence [text | orig | noise].
template <class Real>
Latent<Real> predict_noise(const Params<Real>& params, Real t, const Latent<Real>& z_noise,
                           const Latent<Real>& z_orig, const std::vector<int>& instr_ids,
                           Workspace<Real>* ws = nullptr, ForwardProbe* probe = nullptr);

// Per-sample mean squared epsilon error plus gradient accumulation (when
// grads is non-null). The loss is mean over latent elements.
template <class Real>
Real loss_and_grad(const Params<Real>& params, Real t, const Latent<Real>& z_noise,
                   const Latent<Real>& z_orig, const std::vector<int>& instr_ids,
                   const Latent<Real>& eps_target, Grads<Real>* grads, Workspace<Real>* ws);

// Modulation vectors of one block at timestep t (text/noise groups use t,
// the orig group always uses 0).
template <class Real>
ModVectors<Real> block_modulation(const Params<Real>& params, int block_index, Real t);

// --- schedule + sampling ---------------------------------------------------------

// Cosine variance-preserving schedule; alpha_bar(0) = 1, alpha_bar(1) = 0.
inline double alpha_bar(double t) {
  const double c = std::cos(0.5 * M_PI * t);
  return c * c;
}

struct SampleConfig {
  int steps = 50;
  uint64_t seed = 0;
};

// Deterministic DDIM (eta = 0) over a uniform midpoint t-grid from 1 to 0;
// decodes and clamps to [0,1].
VideoTensor sample_edit(const Params<float>& params, const VideoTensor& orig,
                        const std::string& instruction, const SampleConfig& cfg);

// --- checkpoints ------------------------------------------------------------------

void save_params(const std::string& path, Params<float>& params, int step,
                 const std::string& stage,
                 const std::vector<std::pair<std::string, std::vector<float>>>& extra = {});
Params<float> load_params(const std::string& path, int* step = nullptr,
                          std::string* stage = nullptr,
                          std::vector<std::pair<std::string, std::vector<float>>>* extra = nullptr);

extern template struct Params<float>;
extern template struct Params<double>;

}  // namespace icve::model
