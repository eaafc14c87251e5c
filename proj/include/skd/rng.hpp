// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace skd {

// Counter-based randomness. There is no mutable generator state anywhere in
// the library: every draw is a pure hash of
//   (run_seed, stream name, step index, sequence index, position, lane)
// so two samplers that consume the same stream at the same positions see the
// same uniforms regardless of what else happened in between.

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  return splitmix64(h ^ splitmix64(v + 0x632BE59BD9B4E019ULL));
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace detail

/// A named deterministic stream bound to one trajectory (step, sequence).
class RngStream {
 public:
  constexpr RngStream(std::uint64_t run_seed, std::string_view name,
                      std::uint64_t step = 0, std::uint64_t sequence = 0)
      : key_(detail::mix(detail::mix(detail::mix(run_seed, detail::fnv1a(name)),
                                     step),
                         sequence)) {}

  /// Raw 64 bits for (position, lane).
  constexpr std::uint64_t bits(std::uint64_t position,
                               std::uint64_t lane = 0) const {
    return detail::mix(detail::mix(key_, position), lane);
  }

  /// Uniform in [0, 1) with 53 bits of resolution.
  constexpr double uniform(std::uint64_t position,
                           std::uint64_t lane = 0) const {
    return static_cast<double>(bits(position, lane) >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n).
  constexpr std::uint64_t below(std::uint64_t n, std::uint64_t position,
                                std::uint64_t lane = 0) const {
    // Multiply-shift; bias is < n / 2^64, irrelevant at these sizes.
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(bits(position, lane)) * n) >> 64);
  }

  /// Derived stream, used to give sub-procedures their own key space.
  constexpr RngStream fork(std::string_view name) const {
    RngStream child = *this;
    child.key_ = detail::mix(key_, detail::fnv1a(name));
    return child;
  }

  constexpr std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
};

/// Sequential adapter for code that just needs "the next uniform" (corpus
/// generation, parameter init). Still a pure function of the seed.
class RngCursor {
 public:
  explicit constexpr RngCursor(RngStream stream) : stream_(stream) {}

  double uniform() { return stream_.uniform(counter_++); }
  std::uint64_t below(std::uint64_t n) { return stream_.below(n, counter_++); }

  /// Standard normal via Box-Muller on two fresh uniforms.
  double normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  RngStream stream_;
  std::uint64_t counter_ = 0;
};

}  // namespace skd

