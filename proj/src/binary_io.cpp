// SPDX-License-Identifier: Apache-2.0
#include "gim/binary_io.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>

namespace gim::io {

void Writer::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
  if (!out) throw Error("write to '" + path + "' failed");
}

Reader Reader::open(const std::string& path, std::string what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return Reader(std::move(data), std::move(what));
}

void Reader::expect_magic(std::string_view magic) {
  if (remaining() < magic.size() || std::memcmp(data_.data() + pos_, magic.data(), magic.size()) != 0) {
    std::string found;
    for (std::size_t i = 0; i < magic.size() && pos_ + i < data_.size(); ++i) {
      const unsigned char c = data_[pos_ + i];
      found += (c >= 32 && c < 127) ? static_cast<char>(c) : '?';
    }
    throw MagicMismatchError(what_ + ": expected magic '" + std::string(magic) + "', found '" + found + "'");
  }
  pos_ += magic.size();
}

void Reader::need(std::size_t n) const {
  if (remaining() < n) throw TruncatedFileError(what_ + " truncated", pos_ + n, data_.size());
}

void Reader::bytes(void* out, std::size_t n) {
  need(n);
  std::memcpy(out, data_.data() + pos_, n);
  pos_ += n;
}

std::vector<double> Reader::f64s(std::size_t count) {
  if (count > remaining() / sizeof(double)) need(count * sizeof(double));
  std::vector<double> v(count);
  bytes(v.data(), count * sizeof(double));
  return v;
}

std::string Reader::str() {
  const std::uint32_t n = u32();
  need(n);
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

std::uint64_t checked_count(std::span<const std::uint64_t> dims, std::uint64_t limit,
                            const std::string& what) {
  std::uint64_t n = 1;
  for (std::uint64_t d : dims) {
    if (d == 0) throw DimOverflowError(what + ": zero extent in header");
    if (n > std::numeric_limits<std::uint64_t>::max() / d)
      throw DimOverflowError(what + ": extents overflow 64-bit element count");
    n *= d;
  }
  if (n > limit || n > std::numeric_limits<std::uint64_t>::max() / sizeof(double))
    throw DimOverflowError(what + ": element count " + std::to_string(n) + " exceeds limit " +
                           std::to_string(limit));
  return n;
}

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace gim::io
