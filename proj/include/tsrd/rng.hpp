#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace tsrd {

// splitmix64, used to derive well-mixed engine seeds from (seed, stream, counter)
// keys so that every partition/replicate owns an independent generator and
// results do not depend on thread scheduling.
inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_key(std::uint64_t seed, std::uint64_t stream,
                             std::uint64_t counter = 0) noexcept {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ (0x632be59bd9b4e019ULL + stream));
  h = splitmix64(h ^ (0x9e3779b97f4a7c15ULL + counter));
  return h;
}

inline std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream,
                                   std::uint64_t counter = 0) {
  return std::mt19937_64(mix_key(seed, stream, counter));
}

// Stream ids for the pipeline stages; keeps the key space disjoint.
namespace stream {
inline constexpr std::uint64_t kPartition = 1;
inline constexpr std::uint64_t kDataGen = 2;
inline constexpr std::uint64_t kContaminate = 3;
inline constexpr std::uint64_t kBootstrap = 4;
inline constexpr std::uint64_t kInit = 5;
}  // namespace stream

}  // namespace tsrd
