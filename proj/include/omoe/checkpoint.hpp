// Copyright 2026 The omoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint: magic "OMOE", version, precision tag, config snapshot,
// frozen-weight hash, then named tensor entries (utf-8 name, rank, dims,
// dtype tag, little-endian raw values). Round trips are bitwise. A file may
// only be loaded under the precision mode it was written with.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "omoe/backbone.hpp"
#include "omoe/config.hpp"
#include "omoe/errors.hpp"

namespace omoe {

inline constexpr char kCheckpointMagic[4] = {'O', 'M', 'O', 'E'};
inline constexpr uint32_t kCheckpointVersion = 1;

struct RawTensorEntry {
  std::string name;
  std::vector<uint64_t> dims;
  uint8_t dtype = 1;  // 0 = f32, 1 = f64
  std::vector<unsigned char> data;

  size_t numel() const {
    size_t n = 1;
    for (uint64_t d : dims) n *= static_cast<size_t>(d);
    return n;
  }
};

struct RawCheckpoint {
  Precision precision = Precision::kDouble;
  std::string config_json;
  uint64_t backbone_hash = 0;
  std::vector<RawTensorEntry> entries;
};

namespace ckpt_detail {

inline void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("checkpoint: truncated file");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

inline uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw IoError("checkpoint: truncated file");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace ckpt_detail

inline void write_raw_checkpoint(const std::string& path, const RawCheckpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("checkpoint: cannot open for write: " + path);
  os.write(kCheckpointMagic, 4);
  ckpt_detail::put_u32(os, kCheckpointVersion);
  os.put(ck.precision == Precision::kSingle ? '\0' : '\x01');
  ckpt_detail::put_u64(os, ck.config_json.size());
  os.write(ck.config_json.data(), static_cast<std::streamsize>(ck.config_json.size()));
  ckpt_detail::put_u64(os, ck.backbone_hash);
  ckpt_detail::put_u64(os, ck.entries.size());
  for (const auto& e : ck.entries) {
    ckpt_detail::put_u32(os, static_cast<uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    ckpt_detail::put_u32(os, static_cast<uint32_t>(e.dims.size()));
    for (uint64_t d : e.dims) ckpt_detail::put_u64(os, d);
    os.put(static_cast<char>(e.dtype));
    os.write(reinterpret_cast<const char*>(e.data.data()),
             static_cast<std::streamsize>(e.data.size()));
  }
  if (!os) throw IoError("checkpoint: write failed: " + path);
}

inline RawCheckpoint read_raw_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw IoError("checkpoint: bad magic in " + path);
  const uint32_t version = ckpt_detail::get_u32(is);
  if (version != kCheckpointVersion)
    throw IoError("checkpoint: unsupported version " + std::to_string(version));
  RawCheckpoint ck;
  const int prec = is.get();
  if (prec != 0 && prec != 1) throw IoError("checkpoint: bad precision tag");
  ck.precision = prec == 0 ? Precision::kSingle : Precision::kDouble;
  const uint64_t cfg_len = ckpt_detail::get_u64(is);
  ck.config_json.resize(static_cast<size_t>(cfg_len));
  is.read(ck.config_json.data(), static_cast<std::streamsize>(cfg_len));
  ck.backbone_hash = ckpt_detail::get_u64(is);
  const uint64_t n = ckpt_detail::get_u64(is);
  for (uint64_t i = 0; i < n; ++i) {
    RawTensorEntry e;
    const uint32_t name_len = ckpt_detail::get_u32(is);
    e.name.resize(name_len);
    is.read(e.name.data(), name_len);
    const uint32_t rank = ckpt_detail::get_u32(is);
    for (uint32_t r = 0; r < rank; ++r) e.dims.push_back(ckpt_detail::get_u64(is));
    const int dt = is.get();
    if (dt != 0 && dt != 1) throw IoError("checkpoint: bad dtype tag for tensor " + e.name);
    e.dtype = static_cast<uint8_t>(dt);
    const size_t bytes = e.numel() * (e.dtype == 0 ? 4 : 8);
    e.data.resize(bytes);
    is.read(reinterpret_cast<char*>(e.data.data()), static_cast<std::streamsize>(bytes));
    if (!is) throw IoError("checkpoint: truncated tensor data for " + e.name);
    ck.entries.push_back(std::move(e));
  }
  return ck;
}

template <typename T>
void save_checkpoint(const std::string& path, Backbone<T>& model, const RunConfig& cfg) {
  RawCheckpoint ck;
  ck.precision = sizeof(T) == 4 ? Precision::kSingle : Precision::kDouble;
  ck.config_json = run_config_to_json(cfg);
  ck.backbone_hash = model.frozen_hash();
  for (auto& p : model.trainable_params()) {
    RawTensorEntry e;
    e.name = p.name;
    for (size_t d : p.tensor.shape()) e.dims.push_back(d);
    e.dtype = sizeof(T) == 4 ? 0 : 1;
    e.data.resize(p.tensor.numel() * sizeof(T));
    std::memcpy(e.data.data(), p.tensor.values().data(), e.data.size());
    ck.entries.push_back(std::move(e));
  }
  write_raw_checkpoint(path, ck);
}

// Restores trainable parameters into an already-built model; names, shapes,
// dtype and the frozen-weight hash must all match.
template <typename T>
void load_checkpoint_into(const RawCheckpoint& ck, Backbone<T>& model) {
  const Precision want = sizeof(T) == 4 ? Precision::kSingle : Precision::kDouble;
  if (ck.precision != want)
    throw IoError(std::string("checkpoint: precision mismatch: file is ") +
                  precision_name(ck.precision) + ", load requested " + precision_name(want) +
                  " (coercion is not supported)");
  if (ck.backbone_hash != model.frozen_hash())
    throw IoError("checkpoint: frozen backbone hash mismatch; config or build differs");
  auto params = model.trainable_params();
  if (params.size() != ck.entries.size())
    throw IoError("checkpoint: parameter count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& e = ck.entries[i];
    if (e.name != params[i].name)
      throw IoError("checkpoint: parameter name mismatch: " + e.name + " vs " + params[i].name);
    if (e.numel() != params[i].tensor.numel())
      throw IoError("checkpoint: shape mismatch for " + e.name);
    std::memcpy(params[i].tensor.values().data(), e.data.data(), e.data.size());
  }
}

}  // namespace omoe
