#pragma once

#include <cstdint>
#include <random>

namespace idtest {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stable child seed for stream `stream` (and optional sub-stream) of a master
// seed. Used for per-tree, per-fold and per-replication generators so results
// never depend on scheduling.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t sub = 0) {
  return splitmix64(splitmix64(splitmix64(master) ^ (stream + 0x632be59bd9b4e019ULL)) ^
                    (sub + 0x85157af5ULL));
}

inline Rng make_rng(std::uint64_t master, std::uint64_t stream, std::uint64_t sub = 0) {
  return Rng(derive_seed(master, stream, sub));
}

}  // namespace idtest
