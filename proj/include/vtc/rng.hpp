#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace vtc {

/// SplitMix64. The whole generator is the recurrence
///
///   state += 0x9E3779B97F4A7C15
///   z = state
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   return z ^ (z >> 31)
///
/// with all arithmetic mod 2^64. uniform() takes the top 53 bits of the next
/// output and scales by 2^-53, giving a double in [0, 1). fork(tag) seeds a
/// child generator with mix(state ^ mix(tag)), so independent streams can be
/// derived by name without consuming the parent.
class SplitMix64 {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  constexpr std::uint64_t next() noexcept {
    state_ += kGamma;
    return mix(state_);
  }

  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Integer in [lo, hi], inclusive. Modulo bias is irrelevant at test sizes.
  std::uint64_t between(std::uint64_t lo, std::uint64_t hi) noexcept {
    return lo + next() % (hi - lo + 1);
  }

  constexpr SplitMix64 fork(std::uint64_t tag) const noexcept {
    return SplitMix64(mix(state_ ^ mix(tag + kGamma)));
  }

  SplitMix64 fork(std::string_view name) const noexcept { return fork(fnv1a(name)); }

  constexpr std::uint64_t state() const noexcept { return state_; }

  static constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  std::uint64_t state_;
};

}  // namespace vtc
