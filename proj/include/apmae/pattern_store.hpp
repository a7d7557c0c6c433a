#pragma once

// APTN: binary store of attention patterns.
//
//   header (24 bytes, little-endian)
//     char[4]  magic "APTN"
//     u16      version (1)
//     u16      pattern size n
//     f64      eps of the log scaling the store's consumers should use
//     u64      record count
//   record (fixed size: 32 + 4 * n(n+1)/2 bytes)
//     char[16] model id, zero padded
//     u16      layer
//     u16      head
//     u8       task code
//     u8       flags: bit0 correct, bit1 correctness defined, bit2 scaled
//     u16      reserved (0)
//     u64      sample id
//     f32[]    lower-triangular values, row-major

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <unistd.h>

#include "apmae/binary_io.hpp"
#include "apmae/errors.hpp"
#include "apmae/pattern.hpp"

namespace apmae {

inline constexpr char kStoreMagic[4] = {'A', 'P', 'T', 'N'};
inline constexpr std::uint16_t kStoreVersion = 1;
inline constexpr std::size_t kStoreHeaderBytes = 24;
inline constexpr std::size_t kStoreMetaBytes = 32;
inline constexpr std::size_t kModelIdWidth = 16;

struct StoreHeader {
  std::uint16_t version = kStoreVersion;
  std::uint16_t pattern_size = 0;
  double eps = kDefaultScaleEps;
  std::uint64_t count = 0;

  std::size_t record_bytes() const {
    return kStoreMetaBytes + 4 * AttentionPattern::cell_count(pattern_size);
  }
};

namespace detail {

inline void encode_header(io::ByteWriter& w, const StoreHeader& h) {
  w.put_bytes(std::string_view(kStoreMagic, 4));
  w.put<std::uint16_t>(h.version);
  w.put<std::uint16_t>(h.pattern_size);
  w.put<double>(h.eps);
  w.put<std::uint64_t>(h.count);
}

inline StoreHeader decode_header(std::span<const unsigned char> bytes) {
  if (bytes.size() < kStoreHeaderBytes) throw FormatError("truncated APTN header", bytes.size());
  io::ByteReader r(bytes);
  for (int i = 0; i < 4; ++i) {
    if (r.get<char>() != kStoreMagic[i]) throw FormatError("bad APTN magic", static_cast<std::uint64_t>(i));
  }
  StoreHeader h;
  h.version = r.get<std::uint16_t>();
  if (h.version != kStoreVersion) throw FormatError("unsupported APTN version " + std::to_string(h.version), 4);
  h.pattern_size = r.get<std::uint16_t>();
  h.eps = r.get<double>();
  if (!(h.eps > 0.0)) throw FormatError("non-positive eps in APTN header", 8);
  h.count = r.get<std::uint64_t>();
  return h;
}

inline void encode_record(io::ByteWriter& w, const AttentionPattern& p) {
  w.put_fixed_string(p.model_id, kModelIdWidth);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(p.layer));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(p.head));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(p.meta.task));
  std::uint8_t flags = 0;
  if (p.meta.correct.has_value()) flags |= 2;
  if (p.meta.correct.value_or(false)) flags |= 1;
  if (p.meta.scaled) flags |= 4;
  w.put<std::uint8_t>(flags);
  w.put<std::uint16_t>(0);
  w.put<std::uint64_t>(p.meta.sample_id);
  w.put_array<float>(p.values);
}

inline AttentionPattern decode_record(std::span<const unsigned char> bytes, std::uint16_t n,
                                      std::uint64_t offset) {
  io::ByteReader r(bytes, offset);
  AttentionPattern p;
  p.model_id = r.get_fixed_string(kModelIdWidth);
  p.layer = r.get<std::uint16_t>();
  p.head = r.get<std::uint16_t>();
  const auto task_offset = r.offset();
  const auto code = r.get<std::uint8_t>();
  if (code >= kTaskKindCount) throw FormatError("unknown task code " + std::to_string(code), task_offset);
  p.meta.task = static_cast<TaskKind>(code);
  const auto flags = r.get<std::uint8_t>();
  if (flags & 2) p.meta.correct = (flags & 1) != 0;
  p.meta.scaled = (flags & 4) != 0;
  r.get<std::uint16_t>();
  p.meta.sample_id = r.get<std::uint64_t>();
  p.size = n;
  p.values.resize(AttentionPattern::cell_count(n));
  r.get_array<float>(p.values);
  return p;
}

}  // namespace detail

/// Appends records to a temporary file; finish() patches the record count and
/// renames the file into place.
class PatternWriter {
 public:
  PatternWriter(std::filesystem::path path, std::uint16_t pattern_size, double eps = kDefaultScaleEps)
      : path_(std::move(path)) {
    header_.pattern_size = pattern_size;
    header_.eps = eps;
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    tmp_ = path_;
    tmp_ += ".tmp." + std::to_string(::getpid());
    out_.open(tmp_, std::ios::binary | std::ios::trunc);
    if (!out_) throw FormatError("cannot create " + tmp_.string());
    io::ByteWriter w;
    detail::encode_header(w, header_);
    write(w);
  }

  PatternWriter(const PatternWriter&) = delete;
  PatternWriter& operator=(const PatternWriter&) = delete;

  ~PatternWriter() {
    if (!finished_) {
      out_.close();
      std::error_code ec;
      std::filesystem::remove(tmp_, ec);
    }
  }

  void append(const AttentionPattern& p) {
    if (p.size != header_.pattern_size) {
      throw ContractError("pattern size " + std::to_string(p.size) + " differs from store size " +
                          std::to_string(header_.pattern_size));
    }
    if (p.values.size() != AttentionPattern::cell_count(p.size)) throw ContractError("pattern cell count mismatch");
    buffer_.clear();
    detail::encode_record(buffer_, p);
    write(buffer_);
    ++header_.count;
  }

  std::uint64_t finish() {
    io::ByteWriter w;
    detail::encode_header(w, header_);
    out_.seekp(0);
    write(w);
    out_.close();
    if (!out_) throw FormatError("write failed for " + path_.string());
    std::filesystem::rename(tmp_, path_);
    finished_ = true;
    return header_.count;
  }

  std::uint64_t count() const { return header_.count; }

 private:
  void write(const io::ByteWriter& w) {
    out_.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.size()));
  }

  std::filesystem::path path_;
  std::filesystem::path tmp_;
  std::ofstream out_;
  StoreHeader header_;
  io::ByteWriter buffer_;
  bool finished_ = false;
};

/// Streaming reader. Records are fixed size, so read_at() is random access.
class PatternReader {
 public:
  explicit PatternReader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
    if (!in_) throw FormatError("cannot open " + path.string());
    in_.seekg(0, std::ios::end);
    file_size_ = static_cast<std::uint64_t>(in_.tellg());
    in_.seekg(0);
    std::vector<unsigned char> head(std::min<std::uint64_t>(file_size_, kStoreHeaderBytes));
    in_.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
    header_ = detail::decode_header(head);
    const std::uint64_t need = kStoreHeaderBytes + header_.count * header_.record_bytes();
    if (file_size_ < need) {
      const std::uint64_t whole = (file_size_ - kStoreHeaderBytes) / header_.record_bytes();
      throw FormatError("truncated APTN store: " + std::to_string(header_.count) + " records declared, " +
                            std::to_string(whole) + " complete",
                        kStoreHeaderBytes + whole * header_.record_bytes());
    }
    if (file_size_ > need) throw FormatError("trailing bytes after last APTN record", need);
    record_.resize(header_.record_bytes());
  }

  const StoreHeader& header() const { return header_; }
  std::uint64_t size() const { return header_.count; }

  std::optional<AttentionPattern> next() {
    if (cursor_ >= header_.count) return std::nullopt;
    return read_at(cursor_++);
  }

  AttentionPattern read_at(std::uint64_t index) {
    if (index >= header_.count) throw ContractError("record index out of range");
    const std::uint64_t offset = kStoreHeaderBytes + index * header_.record_bytes();
    in_.seekg(static_cast<std::streamoff>(offset));
    in_.read(reinterpret_cast<char*>(record_.data()), static_cast<std::streamsize>(record_.size()));
    if (!in_) throw FormatError("short read in APTN record", offset);
    return detail::decode_record(record_, header_.pattern_size, offset);
  }

 private:
  std::ifstream in_;
  std::uint64_t file_size_ = 0;
  StoreHeader header_;
  std::vector<unsigned char> record_;
  std::uint64_t cursor_ = 0;
};

inline std::uint64_t write_store(std::span<const AttentionPattern> patterns, const std::filesystem::path& path,
                                 double eps = kDefaultScaleEps) {
  const std::uint16_t n = patterns.empty() ? 0 : static_cast<std::uint16_t>(patterns.front().size);
  PatternWriter writer(path, n, eps);
  for (const auto& p : patterns) writer.append(p);
  return writer.finish();
}

inline std::vector<AttentionPattern> read_store(const std::filesystem::path& path) {
  PatternReader reader(path);
  std::vector<AttentionPattern> out;
  out.reserve(reader.size());
  while (auto p = reader.next()) out.push_back(std::move(*p));
  return out;
}

}  // namespace apmae
