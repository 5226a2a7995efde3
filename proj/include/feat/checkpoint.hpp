/*
 * Copyright 2026 The feat Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Checkpoint file:
//
//   "FEATCKPT"            8 bytes
//   version               u32
//   header length         u64
//   header                JSON: {"config": {...}, "tensors": [{name, shape, offset}]}
//   parameters            little-endian f64, in visit order; offsets count doubles
//   checksum              u64 FNV-1a over every preceding byte

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "feat/model.hpp"

namespace feat::checkpoint {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

inline constexpr char kMagic[8] = {'F', 'E', 'A', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kVersion = 1;

inline std::uint64_t fnv1a(const unsigned char* p, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
void put(std::vector<unsigned char>& out, const T& v) {
  const auto* p = reinterpret_cast<const unsigned char*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

inline std::vector<unsigned char> serialize(const model::ModelConfig& cfg,
                                            model::ModelParams params) {
  model::json tensors = model::json::array();
  std::vector<double> flat;
  params.visit([&](const std::string& name, Tensor& t) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", flat.size()}});
    flat.insert(flat.end(), t.data().begin(), t.data().end());
  });
  const std::string header = model::json{{"config", cfg.to_json()}, {"tensors", tensors}}.dump();
  std::vector<unsigned char> out(kMagic, kMagic + 8);
  put(out, kVersion);
  put(out, static_cast<std::uint64_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  const auto* raw = reinterpret_cast<const unsigned char*>(flat.data());
  out.insert(out.end(), raw, raw + flat.size() * sizeof(double));
  put(out, fnv1a(out.data(), out.size()));
  return out;
}

inline void save(const std::string& path, const model::ModelConfig& cfg,
                 const model::ModelParams& params) {
  const auto bytes = serialize(cfg, params);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorKind::kIo, "cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(ErrorKind::kIo, "write failed for " + path);
}

struct Loaded {
  model::ModelConfig config;
  model::ModelParams params;
};

/// Throws ConfigError naming the first field whose value differs.
inline void require_config(const model::ModelConfig& found, const model::ModelConfig& expected) {
  const auto a = found.to_json(), b = expected.to_json();
  for (const auto& [key, value] : b.items()) {
    if (a.at(key) != value)
      throw ConfigError(key, "checkpoint has " + a.at(key).dump() + ", expected " + value.dump());
  }
}

inline Loaded deserialize(const std::vector<unsigned char>& bytes,
                          const std::optional<model::ModelConfig>& expected = std::nullopt) {
  constexpr std::size_t kFixed = 8 + 4 + 8;
  auto bad = [](const std::string& why) { fail(ErrorKind::kFormat, "checkpoint: " + why); };
  if (bytes.size() < kFixed + 8) bad("file truncated");
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) bad("bad magic bytes");
  std::uint32_t version;
  std::uint64_t header_len;
  std::memcpy(&version, bytes.data() + 8, 4);
  std::memcpy(&header_len, bytes.data() + 12, 8);
  if (version != kVersion)
    bad("unsupported version " + std::to_string(version) + " (expected " +
        std::to_string(kVersion) + ")");
  if (header_len > bytes.size() - kFixed - 8) bad("file truncated");
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  if (stored != fnv1a(bytes.data(), bytes.size() - 8)) bad("checksum mismatch");

  model::json header;
  try {
    header = model::json::parse(bytes.begin() + kFixed, bytes.begin() + kFixed + header_len);
  } catch (const model::json::exception& e) {
    bad(std::string("unreadable header: ") + e.what());
  }
  Loaded out{model::ModelConfig::from_json(header.at("config")), {}};
  if (expected) require_config(out.config, *expected);

  const std::size_t data_begin = kFixed + header_len;
  const std::size_t data_bytes = bytes.size() - 8 - data_begin;
  if (data_bytes % sizeof(double) != 0) bad("parameter block is not a whole number of doubles");
  const std::size_t total = data_bytes / sizeof(double);

  out.params = model::ModelParams::init(out.config);
  const auto& manifest = header.at("tensors");
  std::size_t idx = 0, expected_offset = 0;
  out.params.visit([&](const std::string& name, Tensor& t) {
    if (idx >= manifest.size()) bad("manifest is missing " + name);
    const auto& entry = manifest[idx++];
    if (entry.at("name").get<std::string>() != name)
      bad("expected tensor " + name + ", found " + entry.at("name").get<std::string>());
    if (entry.at("shape").get<Shape>() != t.shape()) bad("shape mismatch for " + name);
    const auto offset = entry.at("offset").get<std::size_t>();
    if (offset != expected_offset || offset + t.numel() > total) bad("bad offset for " + name);
    std::memcpy(t.mutable_data().data(),
                bytes.data() + data_begin + offset * sizeof(double), t.numel() * sizeof(double));
    expected_offset += t.numel();
  });
  if (idx != manifest.size() || expected_offset != total) bad("trailing tensors in manifest");
  out.params.retie();
  return out;
}

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline Loaded load(const std::string& path,
                   const std::optional<model::ModelConfig>& expected = std::nullopt) {
  return deserialize(read_file(path), expected);
}

}  // namespace feat::checkpoint
