#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace laddernat {

// FNV-1a, used for config hashing and for deriving named sub-seeds from a
// single master seed so that every pipeline stage draws from its own stream.
inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose) {
  std::uint64_t h = fnv1a64(purpose);
  // splitmix64 finalizer over master ^ purpose-hash
  std::uint64_t z = master ^ h;
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t master, std::string_view purpose) {
  return std::mt19937_64(derive_seed(master, purpose));
}

}  // namespace laddernat
