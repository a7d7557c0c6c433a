#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <type_traits>
#include <vector>

#include <unistd.h>

#include "apmae/errors.hpp"

namespace apmae::io {

namespace detail {

template <typename T>
T to_little(T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    return value;
  } else {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }
}

}  // namespace detail

/// Appends little-endian scalars to a byte buffer.
class ByteWriter {
 public:
  template <typename T>
  void put(T value) {
    value = detail::to_little(value);
    const auto* p = reinterpret_cast<const unsigned char*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }

  void put_bytes(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  /// Fixed-width, zero-padded field; longer strings are rejected.
  void put_fixed_string(std::string_view s, std::size_t width) {
    if (s.size() > width) throw ConfigError("string '" + std::string(s) + "' exceeds field width " + std::to_string(width));
    put_bytes(s);
    bytes_.insert(bytes_.end(), width - s.size(), 0);
  }

  void put_string(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes(s);
  }

  template <typename T>
  void put_array(std::span<const T> values) {
    if constexpr (std::endian::native == std::endian::little) {
      const auto* p = reinterpret_cast<const unsigned char*>(values.data());
      bytes_.insert(bytes_.end(), p, p + values.size_bytes());
    } else {
      for (const T& v : values) put(v);
    }
  }

  const std::vector<unsigned char>& bytes() const { return bytes_; }
  std::vector<unsigned char>& bytes() { return bytes_; }
  std::size_t size() const { return bytes_.size(); }
  void clear() { bytes_.clear(); }

 private:
  std::vector<unsigned char> bytes_;
};

/// Bounds-checked little-endian decoding over a byte span. `base_offset` is
/// added to positions reported in errors so they refer to file offsets.
class ByteReader {
 public:
  explicit ByteReader(std::span<const unsigned char> bytes, std::uint64_t base_offset = 0)
      : bytes_(bytes), base_(base_offset) {}

  template <typename T>
  T get() {
    need(sizeof(T), "scalar");
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return detail::to_little(value);
  }

  std::string get_fixed_string(std::size_t width) {
    need(width, "string field");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), width);
    pos_ += width;
    const auto end = s.find('\0');
    if (end != std::string::npos) s.resize(end);
    return s;
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n, "string body");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  template <typename T>
  void get_array(std::span<T> out) {
    need(out.size_bytes(), "array");
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out.data(), bytes_.data() + pos_, out.size_bytes());
      pos_ += out.size_bytes();
    } else {
      for (T& v : out) v = get<T>();
    }
  }

  std::size_t position() const { return pos_; }
  std::uint64_t offset() const { return base_ + pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("truncated input while reading ") + what, offset());
  }

  std::span<const unsigned char> bytes_;
  std::uint64_t base_;
  std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<unsigned char> data(size);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(size));
  if (!in) throw FormatError("short read on " + path.string());
  return data;
}

inline std::string read_text(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

/// Writes through a sibling temporary file and renames it over `path`, so an
/// interrupted run never leaves a partially written output behind.
inline void atomic_write(const std::filesystem::path& path,
                         const std::function<void(std::ostream&)>& body) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot create " + tmp.string());
    body(out);
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw FormatError("write failed for " + path.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

inline void atomic_write_bytes(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  atomic_write(path, [&](std::ostream& out) {
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  });
}

inline void atomic_write_text(const std::filesystem::path& path, std::string_view text) {
  atomic_write(path, [&](std::ostream& out) { out.write(text.data(), static_cast<std::streamsize>(text.size())); });
}

}  // namespace apmae::io
