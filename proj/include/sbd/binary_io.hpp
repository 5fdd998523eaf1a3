#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sbd/errors.hpp"

namespace sbd {

using Bytes = std::vector<std::uint8_t>;

// Little-endian encoder shared by the SAB, SWB, SFM and SLM formats.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { put_le(v, 2); }
  void u32(std::uint32_t v) { put_le(v, 4); }
  void u64(std::uint64_t v) { put_le(v, 8); }
  void i32(std::int32_t v) { put_le(static_cast<std::uint32_t>(v), 4); }
  void f32(float v) { put_le(std::bit_cast<std::uint32_t>(v), 4); }
  void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v), 8); }

  void magic(std::string_view m) { buf_.insert(buf_.end(), m.begin(), m.end()); }

  // u16 length prefix followed by the raw UTF-8 bytes.
  void short_string(std::string_view s) {
    if (s.size() > UINT16_MAX) {
      throw ValidationError("string of " + std::to_string(s.size()) + " bytes exceeds u16 length prefix");
    }
    u16(static_cast<std::uint16_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }

  const Bytes& bytes() const& { return buf_; }
  Bytes bytes() && { return std::move(buf_); }
  std::size_t size() const { return buf_.size(); }

 private:
  void put_le(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) {
      buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
  }

  Bytes buf_;
};

// Bounds-checked little-endian decoder. Truncation throws CorruptionError
// carrying the byte offset and, when set, the record being decoded.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
  std::uint64_t u64() { return get_le(8); }
  std::int32_t i32() { return static_cast<std::int32_t>(static_cast<std::uint32_t>(get_le(4))); }
  float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(get_le(4))); }
  double f64() { return std::bit_cast<double>(get_le(8)); }

  // Returns false without consuming anything when the magic does not match.
  bool expect_magic(std::string_view m) {
    if (remaining() < m.size() || std::memcmp(data_.data() + pos_, m.data(), m.size()) != 0) {
      return false;
    }
    pos_ += m.size();
    return true;
  }

  std::string short_string() {
    const std::size_t n = u16();
    require(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  // Fails fast when a declared payload cannot fit in the remaining bytes.
  void require(std::uint64_t n) const {
    if (n > remaining()) {
      throw CorruptionError("truncated payload: need " + std::to_string(n) + " bytes, " +
                                std::to_string(remaining()) + " available",
                            pos_, record_);
    }
  }

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool at_end() const { return pos_ == data_.size(); }
  void set_record(std::int64_t index) { record_ = index; }

 private:
  std::uint64_t get_le(int width) {
    require(static_cast<std::uint64_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    }
    pos_ += width;
    return v;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::int64_t record_ = -1;
};

inline Bytes read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open '" + path + "' for reading");
  }
  Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) {
    throw IoError("read failed on '" + path + "'");
  }
  return data;
}

inline void write_file_bytes(const std::string& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open '" + path + "' for writing");
  }
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) {
    throw IoError("write failed on '" + path + "'");
  }
}

// FNV-1a, 64-bit. Content digest recorded in run manifests.
inline std::uint64_t content_digest(std::span<const std::uint8_t> data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : data) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace sbd
