#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace certsmooth {

using Rng = std::mt19937_64;

/// Seed of a named sub-stream ("init", "data", "pgd", "pgpe-member", ...) of a
/// master seed. Streams with different names or indices are decorrelated.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t index = 0)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : stream) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    auto mix = [](std::uint64_t z) {  // splitmix64 finalizer
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return mix(mix(master ^ h) + index);
}

inline Rng make_rng(std::uint64_t master, std::string_view stream, std::uint64_t index = 0)
{
    return Rng(derive_seed(master, stream, index));
}

}  // namespace certsmooth
