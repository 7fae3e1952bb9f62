// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string_view>

namespace pmae {

using Rng = std::mt19937_64;

/// Named seed streams. Every random decision in a run draws from an engine
/// derived from (run seed, stream, ids...), so any sample's randomness can
/// be regenerated from its coordinates without replaying earlier draws.
namespace stream {
inline constexpr std::string_view kInit = "init";
inline constexpr std::string_view kMask = "mask";
inline constexpr std::string_view kAugment = "augment";
inline constexpr std::string_view kSplit = "split";
inline constexpr std::string_view kSubset = "subset";
inline constexpr std::string_view kDropPath = "drop_path";
inline constexpr std::string_view kShuffle = "shuffle";
inline constexpr std::string_view kPad = "pad";
inline constexpr std::string_view kSynth = "synth";
}  // namespace stream

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream_name, std::span<const std::uint64_t> ids);

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream_name,
                                 std::initializer_list<std::uint64_t> ids = {}) {
  return derive_seed(seed, stream_name, std::span<const std::uint64_t>(ids.begin(), ids.size()));
}

inline Rng make_rng(std::uint64_t seed, std::string_view stream_name, std::initializer_list<std::uint64_t> ids = {}) {
  return Rng(derive_seed(seed, stream_name, ids));
}

inline Rng make_rng(std::uint64_t seed, std::string_view stream_name, std::span<const std::uint64_t> ids) {
  return Rng(derive_seed(seed, stream_name, ids));
}

// Uniform double in [0, 1) built from the top 53 bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Uniform integer in [lo, hi].
std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi);

// Box-Muller standard normal.
double standard_normal(Rng& rng);

// Normal(0, std) resampled until it falls within two standard deviations.
double truncated_normal(Rng& rng, double std);

template <typename T>
void fill_truncated_normal(std::span<T> values, Rng& rng, double std) {
  for (auto& v : values) v = static_cast<T>(truncated_normal(rng, std));
}

// Fisher-Yates over the given range, driven by uniform_int.
template <typename It>
void shuffle(It first, It last, Rng& rng) {
  const auto n = static_cast<std::int64_t>(last - first);
  for (std::int64_t i = n - 1; i > 0; --i) {
    const auto j = uniform_int(rng, 0, i);
    std::swap(first[i], first[j]);
  }
}

}  // namespace pmae
