#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dhue {

using Rng = std::mt19937_64;

// 64-bit FNV-1a; stable across platforms, unlike std::hash.
constexpr std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Derives an independent stream seed from a base seed and a label.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label) {
    std::uint64_t h = fnv1a(label, 1469598103934665603ull ^ (base * 0x9E3779B97F4A7C15ull));
    // splitmix64 finaliser
    h += 0x9E3779B97F4A7C15ull;
    h = (h ^ (h >> 30)) * 0xBF58476D1CE4E5B9ull;
    h = (h ^ (h >> 27)) * 0x94D049BB133111EBull;
    return h ^ (h >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    return derive_seed(base, std::string_view(reinterpret_cast<const char*>(&index), sizeof(index)));
}

}  // namespace dhue
