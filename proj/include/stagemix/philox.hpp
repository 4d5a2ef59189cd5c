#pragma once

// Philox4x32-10 counter-based generator (Salmon et al., "Parallel random
// numbers: as easy as 1, 2, 3", SC'11) and the few derived draws the toolkit
// needs. Every draw is a pure function of (key, counter), so a stream position
// is just an integer and checkpoints never carry opaque engine state.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace stagemix {

/// Identifier written into manifests; bump the suffix if any derived draw changes.
inline constexpr const char* kGeneratorId = "philox4x32-10/stagemix-v1";

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

namespace detail {

__extension__ using uint128 = unsigned __int128;

inline constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
inline constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
inline constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
inline constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

constexpr void philox_round(PhiloxCounter& c, const PhiloxKey& k) noexcept {
  const std::uint64_t p0 = std::uint64_t{kPhiloxM0} * c[0];
  const std::uint64_t p1 = std::uint64_t{kPhiloxM1} * c[2];
  c = {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0], static_cast<std::uint32_t>(p1),
       static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1], static_cast<std::uint32_t>(p0)};
}

}  // namespace detail

constexpr PhiloxCounter philox4x32_10(PhiloxCounter ctr, PhiloxKey key) noexcept {
  for (int round = 0; round < 10; ++round) {
    if (round != 0) {
      key[0] += detail::kPhiloxW0;
      key[1] += detail::kPhiloxW1;
    }
    detail::philox_round(ctr, key);
  }
  return ctr;
}

constexpr PhiloxKey philox_key(std::uint64_t seed) noexcept {
  return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
}

/// One 64-bit word from block (index, stream_hi, stream_lo) under `seed`.
/// `index` occupies counter words 0-1; the stream words select disjoint sequences.
constexpr std::uint64_t philox_u64(std::uint64_t seed, std::uint64_t index, std::uint32_t stream_hi,
                                   std::uint32_t stream_lo) noexcept {
  const PhiloxCounter out = philox4x32_10(
      {static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), stream_hi, stream_lo},
      philox_key(seed));
  return (std::uint64_t{out[1]} << 32) | out[0];
}

/// Uniform double in [0, 1) with 53 random bits.
constexpr double unit_double(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Sequential view over one Philox stream: draw k uses counter index k.
class PhiloxStream {
 public:
  constexpr PhiloxStream(std::uint64_t seed, std::uint32_t stream_hi, std::uint32_t stream_lo,
                         std::uint64_t position = 0) noexcept
      : seed_(seed), hi_(stream_hi), lo_(stream_lo), position_(position) {}

  constexpr std::uint64_t next_u64() noexcept { return philox_u64(seed_, position_++, hi_, lo_); }

  constexpr double next_unit() noexcept { return unit_double(next_u64()); }

  /// Unbiased integer in [0, bound) (Lemire's multiply-and-reject).
  constexpr std::uint64_t next_below(std::uint64_t bound) noexcept {
    detail::uint128 m = static_cast<detail::uint128>(next_u64()) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
      const std::uint64_t threshold = (0 - bound) % bound;
      while (low < threshold) {
        m = static_cast<detail::uint128>(next_u64()) * bound;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  /// Standard normal via Box-Muller; consumes two draws, discards the sine branch.
  double next_gaussian() noexcept {
    const double u1 = 1.0 - next_unit();  // (0, 1]
    const double u2 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  constexpr std::uint64_t position() const noexcept { return position_; }

 private:
  std::uint64_t seed_;
  std::uint32_t hi_;
  std::uint32_t lo_;
  std::uint64_t position_;
};

}  // namespace stagemix
