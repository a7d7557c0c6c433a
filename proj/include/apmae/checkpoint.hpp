#pragma once

// APCK checkpoints: a config block followed by a named tensor table.
//
//   char[4] magic "APCK"
//   u16     version (1)
//   string  kind ("mae", "lm")
//   string  config as JSON
//   u64     optimiser steps taken
//   u32     tensor count
//   per tensor: string name, u32 rows, u32 cols, f32[rows*cols]
//
// Strings are u32 length-prefixed; everything is little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "apmae/binary_io.hpp"
#include "apmae/errors.hpp"
#include "apmae/nn.hpp"

namespace apmae {

inline constexpr char kCheckpointMagic[4] = {'A', 'P', 'C', 'K'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> values;
};

struct Checkpoint {
  std::string kind;
  nlohmann::json config;
  std::uint64_t steps = 0;
  std::vector<CheckpointTensor> tensors;
};

template <typename T>
std::vector<CheckpointTensor> export_tensors(const nn::ParamStore<T>& ps) {
  std::vector<CheckpointTensor> out;
  for (const auto& info : ps.tensors()) {
    CheckpointTensor t{info.name, static_cast<std::uint32_t>(info.rows), static_cast<std::uint32_t>(info.cols), {}};
    t.values.resize(static_cast<std::size_t>(info.rows * info.cols));
    for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] = static_cast<float>(ps.values()[info.offset + i]);
    out.push_back(std::move(t));
  }
  return out;
}

/// Copies tensors into a freshly constructed store, matching by name and shape.
template <typename T>
void import_tensors(nn::ParamStore<T>& ps, const std::vector<CheckpointTensor>& tensors) {
  if (tensors.size() != ps.tensors().size()) {
    throw FormatError("checkpoint has " + std::to_string(tensors.size()) + " tensors, model expects " +
                      std::to_string(ps.tensors().size()));
  }
  for (const auto& t : tensors) {
    const auto id = ps.find(t.name);
    const auto& info = ps.tensors()[id];
    if (info.rows != t.rows || info.cols != t.cols) throw FormatError("shape mismatch for tensor " + t.name);
    auto dst = ps.value(id);
    for (std::size_t i = 0; i < t.values.size(); ++i) dst.data()[i] = static_cast<T>(t.values[i]);
  }
}

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& ck) {
  io::ByteWriter w;
  w.put_bytes(std::string_view(kCheckpointMagic, 4));
  w.put<std::uint16_t>(kCheckpointVersion);
  w.put_string(ck.kind);
  w.put_string(ck.config.dump());
  w.put<std::uint64_t>(ck.steps);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    w.put_string(t.name);
    w.put<std::uint32_t>(t.rows);
    w.put<std::uint32_t>(t.cols);
    w.put_array<float>(t.values);
  }
  return std::move(w.bytes());
}

inline Checkpoint decode_checkpoint(std::span<const unsigned char> bytes) {
  io::ByteReader r(bytes);
  for (int i = 0; i < 4; ++i)
    if (r.get<char>() != kCheckpointMagic[i]) throw FormatError("bad checkpoint magic", static_cast<std::uint64_t>(i));
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version", 4);
  Checkpoint ck;
  ck.kind = r.get_string();
  const auto cfg_offset = r.offset();
  try {
    ck.config = nlohmann::json::parse(r.get_string());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint config: ") + e.what(), cfg_offset);
  }
  ck.steps = r.get<std::uint64_t>();
  const auto count = r.get<std::uint32_t>();
  ck.tensors.resize(count);
  for (auto& t : ck.tensors) {
    t.name = r.get_string();
    t.rows = r.get<std::uint32_t>();
    t.cols = r.get<std::uint32_t>();
    t.values.resize(static_cast<std::size_t>(t.rows) * t.cols);
    r.get_array<float>(t.values);
  }
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint", r.offset());
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ck);
  io::atomic_write_bytes(path, bytes);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return decode_checkpoint(bytes);
}

}  // namespace apmae
