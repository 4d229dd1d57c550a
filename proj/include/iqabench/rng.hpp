#pragma once

#include <cstdint>
#include <random>

namespace iqabench {

// splitmix64 finalizer; used to derive independent streams from (seed, tags).
inline std::uint64_t mix_seed(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    return mix_seed(mix_seed(a) ^ b);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix_seed(mix_seed(a, b) ^ c);
}

inline std::mt19937_64 make_rng(std::uint64_t seed) {
    return std::mt19937_64(mix_seed(seed));
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
    return std::mt19937_64(mix_seed(seed, stream));
}

}  // namespace iqabench
