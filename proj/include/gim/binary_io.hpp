// SPDX-License-Identifier: Apache-2.0
//
// Little-endian primitives shared by the GIMD, GIMA and GIMC formats.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gim/errors.hpp"

namespace gim::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void magic(std::string_view m) { bytes(m.data(), m.size()); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void i32(std::int32_t v) { bytes(&v, 4); }
  void f64s(std::span<const double> v) { bytes(v.data(), v.size() * sizeof(double)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<unsigned char>& buffer() const noexcept { return buf_; }
  /// Writes the buffer to `path`, replacing any existing file.
  void save(const std::string& path) const;

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  Reader(std::vector<unsigned char> data, std::string what)
      : data_(std::move(data)), what_(std::move(what)) {}
  static Reader open(const std::string& path, std::string what);

  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t position() const noexcept { return pos_; }

  void expect_magic(std::string_view magic);
  /// Throws TruncatedFileError with expected/actual counts when fewer than
  /// `n` bytes remain.
  void need(std::size_t n) const;
  void bytes(void* out, std::size_t n);
  std::uint8_t u8() { return pod<std::uint8_t>(); }
  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  std::int32_t i32() { return pod<std::int32_t>(); }
  std::vector<double> f64s(std::size_t count);
  std::string str();

 private:
  template <class T>
  T pod() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  std::vector<unsigned char> data_;
  std::size_t pos_ = 0;
  std::string what_;
};

/// Multiplies extents, throwing DimOverflowError when the element count or
/// its byte size would not fit in 64 bits or exceeds `limit` elements.
std::uint64_t checked_count(std::span<const std::uint64_t> dims, std::uint64_t limit,
                            const std::string& what);

/// FNV-1a 64-bit over raw bytes.
std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace gim::io
