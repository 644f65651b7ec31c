#pragma once

#include <cstdint>

namespace placekd {

// Independent seed for a named sub-stream (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Stream ids used across the project.
enum SeedStream : std::uint64_t {
  kStreamBackbone0 = 1,
  kStreamBackbone1 = 2,
  kStreamTransform = 3,
  kStreamDataOrder = 4,
  kStreamNegatives = 5,
  kStreamSynth = 6,
};

}  // namespace placekd
