// Copyright (c) 2026 ICVE Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace icve {

// Dense (frames x height x width x 3) video, values in [0,1], row-major.
struct VideoTensor {
  int t = 0, h = 0, w = 0;
  std::vector<float> data;  // size t*h*w*3

  VideoTensor() = default;
  VideoTensor(int t_, int h_, int w_, float fill = 0.f)
      : t(t_), h(h_), w(w_), data(static_cast<size_t>(t_) * h_ * w_ * 3, fill) {}

  size_t numel() const { return data.size(); }
  float& at(int f, int y, int x, int c) {
    return data[((static_cast<size_t>(f) * h + y) * w + x) * 3 + c];
  }
  float at(int f, int y, int x, int c) const {
    return data[((static_cast<size_t>(f) * h + y) * w + x) * 3 + c];
  }
  bool same_shape(const VideoTensor& o) const { return t == o.t && h == o.h && w == o.w; }
};

// Per-frame binary mask, (frames x height x width), values 0/1.
struct MaskTensor {
  int t = 0, h = 0, w = 0;
  std::vector<uint8_t> data;

  MaskTensor() = default;
  MaskTensor(int t_, int h_, int w_, uint8_t fill = 0)
      : t(t_), h(h_), w(w_), data(static_cast<size_t>(t_) * h_ * w_, fill) {}

  uint8_t& at(int f, int y, int x) {
    return data[(static_cast<size_t>(f) * h + y) * w + x];
  }
  uint8_t at(int f, int y, int x) const {
    return data[(static_cast<size_t>(f) * h + y) * w + x];
  }
  size_t area(int f) const {
    size_t n = 0;
    const size_t base = static_cast<size_t>(f) * h * w;
    for (size_t i = 0; i < static_cast<size_t>(h) * w; ++i) n += data[base + i];
    return n;
  }
  size_t total_area() const {
    size_t n = 0;
    for (uint8_t v : data) n += v;
    return n;
  }
};

inline VideoTensor slice_frames(const VideoTensor& v, int start, int end) {
  if (start < 0 || end > v.t || start >= end) throw std::invalid_argument("slice_frames: bad range");
  VideoTensor out(end - start, v.h, v.w);
  const size_t frame = static_cast<size_t>(v.h) * v.w * 3;
  std::copy(v.data.begin() + start * frame, v.data.begin() + end * frame, out.data.begin());
  return out;
}

// Nearest-neighbor resize in all three dims (used by resolution bucketing).
inline VideoTensor resize_nn(const VideoTensor& v, int t, int h, int w) {
  if (v.t == t && v.h == h && v.w == w) return v;
  VideoTensor out(t, h, w);
  for (int f = 0; f < t; ++f) {
    int sf = std::min(v.t - 1, static_cast<int>((static_cast<int64_t>(f) * v.t) / t));
    for (int y = 0; y < h; ++y) {
      int sy = std::min(v.h - 1, static_cast<int>((static_cast<int64_t>(y) * v.h) / h));
      for (int x = 0; x < w; ++x) {
        int sx = std::min(v.w - 1, static_cast<int>((static_cast<int64_t>(x) * v.w) / w));
        for (int c = 0; c < 3; ++c) out.at(f, y, x, c) = v.at(sf, sy, sx, c);
      }
    }
  }
  return out;
}

inline float luma(float r, float g, float b) {
  return 0.299f * r + 0.587f * g + 0.114f * b;
}

}  // namespace icve
