// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace gim {

/// Purposes used to carve independent streams out of one run seed.
enum class Stream : std::uint64_t {
  init = 1,
  shuffle = 2,
  negatives = 3,
  window = 4,
  probe = 5,
  data = 6,
  split = 7,
  check = 8,
};

/// Deterministic random source: std::mt19937_64 seeded through SplitMix64.
///
/// derive() builds a child stream from (parent seed, purpose, a, b) by folding
/// each word through the SplitMix64 finaliser, so streams keyed by e.g.
/// (module, epoch, step) never depend on how many numbers other streams drew.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }

  SeededRng derive(Stream purpose, std::uint64_t a = 0, std::uint64_t b = 0,
                   std::uint64_t c = 0) const;

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  double normal();

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

}  // namespace gim
