// SPDX-License-Identifier: Apache-2.0
#include "gim/rng.hpp"

#include "gim/errors.hpp"

namespace gim {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

SeededRng SeededRng::derive(Stream purpose, std::uint64_t a, std::uint64_t b,
                            std::uint64_t c) const {
  std::uint64_t h = splitmix64(seed_ ^ 0x6a09e667f3bcc908ULL);
  for (std::uint64_t w : {static_cast<std::uint64_t>(purpose), a, b, c}) h = splitmix64(h ^ w);
  return SeededRng(h);
}

double SeededRng::uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

double SeededRng::uniform(double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(engine_);
}

std::size_t SeededRng::index(std::size_t n) {
  if (n == 0) throw ValueError("SeededRng::index on empty range");
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

double SeededRng::normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }

}  // namespace gim
