#pragma once

#include <cstdint>
#include <random>

namespace jumppath {

/// splitmix64 finalizer; used to derive independent per-path seeds from a
/// (master seed, path index) pair so ensembles parallelize deterministically.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t path_seed(std::uint64_t master, std::uint64_t index) {
  return mix64(mix64(master) ^ mix64(index + 0x51ed2701ULL));
}

/// Uniform draw in (0, 1) from the engine's 53 most significant bits.
/// Hand-rolled so path records are bit-identical across standard libraries
/// (std::mt19937_64's sequence is pinned by the standard, the distributions
/// are not).
inline double uniform_open(std::mt19937_64& eng) {
  std::uint64_t bits;
  do {
    bits = eng() >> 11;
  } while (bits == 0);
  return static_cast<double>(bits) * 0x1.0p-53;
}

/// Uniform draw in [0, 1).
inline double uniform_half_open(std::mt19937_64& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

/// Unit-rate exponential via inverse CDF.
inline double unit_exponential(std::mt19937_64& eng) { return -std::log(uniform_open(eng)); }

}  // namespace jumppath
