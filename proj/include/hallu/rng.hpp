#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace hallu {

using Rng = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seed for the stream `label` / `index` under `master`. Streams with different
/// labels never share state, so adding a consumer leaves existing streams unchanged.
inline constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view label,
                                           std::uint64_t index = 0) {
  return splitmix64(splitmix64(master ^ fnv1a(label)) + splitmix64(index + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t master, std::string_view label, std::uint64_t index = 0) {
  return Rng(derive_seed(master, label, index));
}

}  // namespace hallu
