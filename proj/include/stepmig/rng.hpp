#pragma once

#include <cstdint>
#include <random>

namespace mig {

// splitmix64: cheap stateless mixer used to derive independent stream seeds
// from (seed, stream-id) pairs so results do not depend on worker count.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
  uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ (a * 0x9e3779b97f4a7c15ULL));
  h = splitmix64(h ^ (b * 0xc2b2ae3d27d4eb4fULL));
  h = splitmix64(h ^ (c * 0x165667b19e3779f9ULL));
  return h;
}

using Rng = std::mt19937_64;

inline Rng make_rng(uint64_t seed, uint64_t a = 0, uint64_t b = 0, uint64_t c = 0) {
  return Rng(derive_seed(seed, a, b, c));
}

}  // namespace mig
