#pragma once

#include <cstdint>

#include "cbalance/errors.hpp"

namespace cbal {

namespace detail {

/// 64-bit finalizer (splitmix64 mixing function). Full avalanche.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

}  // namespace detail

/// Counter-based pseudo-random generator keyed by (seed, stream_id).
///
/// The i-th output is mix64(key + i * golden) with key derived from the
/// seed and stream id, i.e. a random-access splitmix64 sequence. Output
/// depends only on (seed, stream_id, draw index): identical across runs,
/// platforms, and worker counts, which is what makes parallel reference
/// building reproducible. Only integer arithmetic is used; no libc or
/// libstdc++ distribution code is involved.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed, std::uint64_t stream_id = 0) noexcept
      : key_(detail::mix64(detail::mix64(seed ^ 0x6A09E667F3BCC909ULL) ^
                           detail::mix64(stream_id ^ 0xBB67AE8584CAA73BULL))),
        seed_(seed),
        stream_id_(stream_id) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  std::uint64_t next_u64() noexcept {
    counter_ += detail::kGolden;
    return detail::mix64(key_ + counter_);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double next_double() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform double strictly inside (0, 1); safe to feed to quantile
  /// functions.
  double next_open_double() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Unbiased uniform integer in [0, n). Lemire multiply-with-rejection.
  std::uint64_t uniform_below(std::uint64_t n) {
    if (n == 0) throw validation_error("uniform_below: n must be positive");
    unsigned __int128 m =
        static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(n);
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
      while (low < threshold) {
        m = static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(n);
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::uint64_t seed_;
  std::uint64_t stream_id_;
};

/// Derives a fresh 64-bit seed for a sub-task, so nested components
/// (population draw, design draws, reference rounds) use disjoint key
/// spaces under one user-facing seed.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) noexcept {
  return detail::mix64(seed ^ detail::mix64(salt ^ 0x3C6EF372FE94F82BULL));
}

}  // namespace cbal
