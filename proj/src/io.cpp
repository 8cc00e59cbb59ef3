// Copyright (c) 2026 ICVE Authors
// SPDX-License-Identifier: Apache-2.0
#include "icve/io.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace icve::io {

namespace {

constexpr char kMagic[4] = {'I', 'C', 'V', 'E'};
constexpr char kCkptMagic[8] = {'I', 'C', 'V', 'E', 'C', 'K', 'P', 'T'};

void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<char*>(b), 4);
}

void put_u16(std::ostream& out, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  out.write(reinterpret_cast<char*>(b), 2);
}

void put_u64(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<char*>(b), 8);
}

uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t get_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  return in;
}

void write_tensor(const std::string& path, uint8_t dtype, const std::vector<uint32_t>& dims,
                  const void* data, size_t bytes) {
  auto out = open_out(path);
  out.write(kMagic, 4);
  const uint8_t version = 1;
  out.put(static_cast<char>(version));
  out.put(static_cast<char>(dtype));
  out.put(static_cast<char>(dims.size()));
  for (uint32_t d : dims) put_u32(out, d);
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) throw std::runtime_error("write failed: " + path);
}

struct RawTensor {
  uint8_t dtype = 0;
  std::vector<uint32_t> dims;
  std::vector<char> payload;
};

RawTensor read_tensor(const std::string& path, bool payload = true) {
  auto in = open_in(path);
  char magic[4];
  in.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("bad ICVE magic: " + path);
  const int version = in.get();
  if (version != 1) throw std::runtime_error("unsupported ICVE version in " + path);
  RawTensor t;
  t.dtype = static_cast<uint8_t>(in.get());
  const int ndim = in.get();
  t.dims.resize(ndim);
  size_t numel = 1;
  for (int i = 0; i < ndim; ++i) {
    t.dims[i] = get_u32(in);
    numel *= t.dims[i];
  }
  if (payload) {
    const size_t bytes = numel * (t.dtype == 1 ? 4 : 1);
    t.payload.resize(bytes);
    in.read(t.payload.data(), static_cast<std::streamsize>(bytes));
    if (!in) throw std::runtime_error("truncated ICVE payload: " + path);
  }
  return t;
}

}  // namespace

void write_video(const std::string& path, const VideoTensor& v) {
  write_tensor(path, 1,
               {static_cast<uint32_t>(v.t), static_cast<uint32_t>(v.h),
                static_cast<uint32_t>(v.w), 3},
               v.data.data(), v.data.size() * 4);
}

VideoTensor read_video(const std::string& path) {
  auto t = read_tensor(path);
  if (t.dtype != 1 || t.dims.size() != 4 || t.dims[3] != 3)
    throw std::runtime_error("not an f32 video tensor: " + path);
  VideoTensor v(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]),
                static_cast<int>(t.dims[2]));
  std::memcpy(v.data.data(), t.payload.data(), t.payload.size());
  return v;
}

void write_mask(const std::string& path, const MaskTensor& m) {
  write_tensor(path, 2,
               {static_cast<uint32_t>(m.t), static_cast<uint32_t>(m.h),
                static_cast<uint32_t>(m.w)},
               m.data.data(), m.data.size());
}

MaskTensor read_mask(const std::string& path) {
  auto t = read_tensor(path);
  if (t.dtype != 2 || t.dims.size() != 3) throw std::runtime_error("not a u8 mask tensor: " + path);
  MaskTensor m(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]),
               static_cast<int>(t.dims[2]));
  std::memcpy(m.data.data(), t.payload.data(), t.payload.size());
  return m;
}

std::pair<std::vector<uint32_t>, int> read_header(const std::string& path) {
  auto t = read_tensor(path, false);
  return {t.dims, t.dtype};
}

void write_json(const std::string& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << "\n";
}

json read_json(const std::string& path) {
  auto in = open_in(path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("bad json in " + path + ": " + e.what());
  }
  return j;
}

void write_jsonl(const std::string& path, const std::vector<json>& rows) {
  auto out = open_out(path);
  for (const auto& r : rows) out << r.dump() << "\n";
}

std::vector<json> read_jsonl(const std::string& path) {
  auto in = open_in(path);
  std::vector<json> rows;
  std::string line;
  size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return rows;
}

const std::vector<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, v] : blobs)
    if (n == name) return &v;
  return nullptr;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  // write to a temp file then rename, so a failed write never clobbers the
  // last good checkpoint
  const std::string tmp = path + ".tmp";
  {
    auto out = open_out(tmp);
    out.write(kCkptMagic, 8);
    put_u32(out, 1);
    const std::string header = ckpt.header.dump();
    put_u32(out, static_cast<uint32_t>(header.size()));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [name, data] : ckpt.blobs) {
      put_u16(out, static_cast<uint16_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put_u64(out, data.size());
      out.write(reinterpret_cast<const char*>(data.data()),
                static_cast<std::streamsize>(data.size() * 4));
    }
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::string& path) {
  auto in = open_in(path);
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, kCkptMagic, 8) != 0)
    throw std::runtime_error("bad checkpoint magic: " + path);
  const uint32_t version = get_u32(in);
  if (version != 1) throw std::runtime_error("unsupported checkpoint version in " + path);
  Checkpoint ckpt;
  const uint32_t header_len = get_u32(in);
  std::string header(header_len, '\0');
  in.read(header.data(), header_len);
  ckpt.header = json::parse(header);
  while (true) {
    const int c = in.peek();
    if (c == EOF) break;
    const uint16_t name_len = get_u16(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const uint64_t count = get_u64(in);
    std::vector<float> data(count);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * 4));
    if (!in) throw std::runtime_error("truncated checkpoint blob in " + path);
    ckpt.blobs.emplace_back(std::move(name), std::move(data));
  }
  return ckpt;
}

void write_ppm(const std::string& path, int h, int w, const std::vector<uint8_t>& rgb) {
  if (rgb.size() != static_cast<size_t>(h) * w * 3)
    throw std::invalid_argument("write_ppm: size mismatch");
  auto out = open_out(path);
  out << "P6\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

void ensure_dir(const std::string& path) { std::filesystem::create_directories(path); }

bool file_exists(const std::string& path) { return std::filesystem::exists(path); }

}  // namespace icve::io
