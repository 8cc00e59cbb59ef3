// Copyright (c) 2026 ICVE Authors
// SPDX-License-Identifier: Apache-2.0
#include "icve/model_impl.hpp"

#include "icve/io.hpp"

namespace icve::model {

// explicit instantiations: float for training/inference, double for the
// finite-difference gradient check
template struct Params<float>;
template struct Params<double>;
template Params<float> init_params<float>(const ModelDims&, uint64_t);
template Params<double> init_params<double>(const ModelDims&, uint64_t);
template Workspace<float>* new_workspace<float>();
template Workspace<double>* new_workspace<double>();
template void free_workspace<float>(Workspace<float>*);
template void free_workspace<double>(Workspace<double>*);
template Latent<float> predict_noise<float>(const Params<float>&, float, const Latent<float>&,
                                            const Latent<float>&, const std::vector<int>&,
                                            Workspace<float>*, ForwardProbe*);
template Latent<double> predict_noise<double>(const Params<double>&, double,
                                              const Latent<double>&, const Latent<double>&,
                                              const std::vector<int>&, Workspace<double>*,
                                              ForwardProbe*);
template float loss_and_grad<float>(const Params<float>&, float, const Latent<float>&,
                                    const Latent<float>&, const std::vector<int>&,
                                    const Latent<float>&, Grads<float>*, Workspace<float>*);
template double loss_and_grad<double>(const Params<double>&, double, const Latent<double>&,
                                      const Latent<double>&, const std::vector<int>&,
                                      const Latent<double>&, Grads<double>*, Workspace<double>*);
template ModVectors<float> block_modulation<float>(const Params<float>&, int, float);
template ModVectors<double> block_modulation<double>(const Params<double>&, int, double);

VideoTensor sample_edit(const Params<float>& params, const VideoTensor& orig,
                        const std::string& instruction, const SampleConfig& cfg) {
  if (cfg.steps < 1) throw std::invalid_argument("sample_edit: steps must be >= 1");
  const auto ids = grammar::tokenize(instruction);
  const Latent<float> z_orig = encode_latent<float>(orig);

  Latent<float> z = z_orig;
  Rng rng(derive_seed(cfg.seed, "sample_noise"));
  for (auto& v : z.v) v = static_cast<float>(rng.normal());

  WorkspaceHandle<float> ws;
  // Midpoint grid keeps alpha_bar strictly positive at every evaluation;
  // the last update lands exactly on t = 0.
  for (int k = cfg.steps; k >= 1; --k) {
    const double t = (k - 0.5) / cfg.steps;
    const double t_prev = k > 1 ? (k - 1.5) / cfg.steps : 0.0;
    const Latent<float> eps = predict_noise<float>(params, static_cast<float>(t), z, z_orig, ids,
                                                   ws.get());
    const double ab_t = alpha_bar(t);
    const double ab_p = alpha_bar(t_prev);
    const float sa_t = static_cast<float>(std::sqrt(ab_t));
    const float sb_t = static_cast<float>(std::sqrt(1.0 - ab_t));
    const float sa_p = static_cast<float>(std::sqrt(ab_p));
    const float sb_p = static_cast<float>(std::sqrt(1.0 - ab_p));
    for (size_t i = 0; i < z.v.size(); ++i) {
      float x0 = (z.v[i] - sb_t * eps.v[i]) / sa_t;
      x0 = std::clamp(x0, -0.5f, 1.5f);  // latent values live in [0,1]
      z.v[i] = sa_p * x0 + sb_p * eps.v[i];
    }
  }
  VideoTensor out = decode_latent(z);
  for (auto& v : out.data) v = std::clamp(v, 0.f, 1.f);
  return out;
}

void save_params(const std::string& path, Params<float>& params, int step,
                 const std::string& stage,
                 const std::vector<std::pair<std::string, std::vector<float>>>& extra) {
  io::Checkpoint ckpt;
  ckpt.header = {{"width", params.dims.width},     {"blocks", params.dims.blocks},
                 {"heads", params.dims.heads},     {"mlp_ratio", params.dims.mlp_ratio},
                 {"text_len", params.dims.text_len}, {"freq_dim", params.dims.freq_dim},
                 {"vocab", params.dims.vocab},     {"step", step},
                 {"stage", stage},                 {"param_count", params.count()}};
  params.visit([&](const std::string& name, std::vector<float>& v) {
    ckpt.blobs.emplace_back(name, v);
  });
  for (const auto& [name, v] : extra) ckpt.blobs.emplace_back(name, v);
  io::write_checkpoint(path, ckpt);
}

Params<float> load_params(const std::string& path, int* step, std::string* stage,
                          std::vector<std::pair<std::string, std::vector<float>>>* extra) {
  const io::Checkpoint ckpt = io::read_checkpoint(path);
  ModelDims dims;
  dims.width = ckpt.header.at("width").get<int>();
  dims.blocks = ckpt.header.at("blocks").get<int>();
  dims.heads = ckpt.header.at("heads").get<int>();
  dims.mlp_ratio = ckpt.header.at("mlp_ratio").get<int>();
  dims.text_len = ckpt.header.at("text_len").get<int>();
  dims.freq_dim = ckpt.header.at("freq_dim").get<int>();
  dims.vocab = ckpt.header.at("vocab").get<int>();
  if (step) *step = ckpt.header.at("step").get<int>();
  if (stage) *stage = ckpt.header.at("stage").get<std::string>();

  Params<float> params = init_params<float>(dims, 0);
  std::vector<std::string> loaded;
  params.visit([&](const std::string& name, std::vector<float>& v) {
    const auto* blob = ckpt.find(name);
    if (!blob) throw std::runtime_error("checkpoint missing parameter " + name + " in " + path);
    if (blob->size() != v.size())
      throw std::runtime_error("checkpoint size mismatch for " + name + " in " + path);
    v = *blob;
    loaded.push_back(name);
  });
  if (extra) {
    for (const auto& [name, v] : ckpt.blobs) {
      if (std::find(loaded.begin(), loaded.end(), name) == loaded.end())
        extra->emplace_back(name, v);
    }
  }
  return params;
}

}  // namespace icve::model
