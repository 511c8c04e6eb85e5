#pragma once

#include <algorithm>
#include <cstdint>
#include <random>

namespace duacm {

using Rng = std::mt19937_64;

/// Mixes a base seed with a stream tag so independent subsystems draw from
/// decorrelated generators (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  return Rng(derive_seed(seed, stream));
}

/// Uniform integer in [0, n) without the implementation-defined behaviour of
/// std::uniform_int_distribution, so index streams are stable everywhere.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  // Lemire's multiply-shift; bias is below 2^-40 for the sizes used here.
  const unsigned __int128 m = static_cast<unsigned __int128>(rng()) * n;
  return static_cast<std::size_t>(m >> 64);
}

inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Fisher-Yates using uniform_index.
template <typename It>
void shuffle(It first, It last, Rng& rng) {
  const auto n = static_cast<std::size_t>(last - first);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = uniform_index(rng, i);
    std::iter_swap(first + (i - 1), first + j);
  }
}

}  // namespace duacm
