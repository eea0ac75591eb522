#pragma once

#include <cstdint>
#include <random>

namespace dcr {

using Rng = std::mt19937_64;

// Independent deterministic stream for (seed, stream); different stream tags
// never share state, so adding a consumer does not shift other draws.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x9e3779b9u};
  return Rng(seq);
}

// Stream tags used across the library.
namespace streams {
inline constexpr std::uint64_t kData = 1;
inline constexpr std::uint64_t kDenoiserInit = 2;
inline constexpr std::uint64_t kEncoderInit = 3;
inline constexpr std::uint64_t kProjectorInit = 4;
inline constexpr std::uint64_t kReferenceProjectorInit = 5;
inline constexpr std::uint64_t kBatches = 6;
inline constexpr std::uint64_t kStage0 = 10;
inline constexpr std::uint64_t kStage1 = 11;
inline constexpr std::uint64_t kStage2 = 12;
inline constexpr std::uint64_t kNaive = 13;
inline constexpr std::uint64_t kProbe = 20;
inline constexpr std::uint64_t kKMeans = 21;
inline constexpr std::uint64_t kVerify = 22;
inline constexpr std::uint64_t kSample = 23;
inline constexpr std::uint64_t kSplit = 24;
inline constexpr std::uint64_t kReconProbe = 25;
inline constexpr std::uint64_t kSandwich = 26;
}  // namespace streams

}  // namespace dcr
