// Copyright (c) 2026 ICVE Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "icve/video.hpp"

#include "json.hpp"

namespace icve::io {

using json = nlohmann::json;

// ICVE tensor container: magic "ICVE", u8 version=1, u8 dtype (1 = f32 LE,
// 2 = u8), u8 ndim, ndim x u32 LE dims, raw row-major payload.
void write_video(const std::string& path, const VideoTensor& v);
VideoTensor read_video(const std::string& path);

void write_mask(const std::string& path, const MaskTensor& m);
MaskTensor read_mask(const std::string& path);

// Header-only peek: (dims, dtype) without loading the payload.
std::pair<std::vector<uint32_t>, int> read_header(const std::string& path);

// --- json -------------------------------------------------------------------

void write_json(const std::string& path, const json& j);
json read_json(const std::string& path);

void write_jsonl(const std::string& path, const std::vector<json>& rows);
std::vector<json> read_jsonl(const std::string& path);

// --- checkpoints ------------------------------------------------------------

// ICVE-CKPT container: magic "ICVECKPT", u32 version, u32 header length,
// JSON header, then named blobs (u16 name length, name bytes, u64 element
// count, f32 LE data).
struct Checkpoint {
  json header;
  std::vector<std::pair<std::string, std::vector<float>>> blobs;

  const std::vector<float>* find(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

// --- misc -------------------------------------------------------------------

void write_ppm(const std::string& path, int h, int w, const std::vector<uint8_t>& rgb);
void ensure_dir(const std::string& path);
bool file_exists(const std::string& path);

}  // namespace icve::io
