#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace slidekit {

// All randomness in the library flows through these helpers. std distributions
// are deliberately avoided: their output is implementation-defined, while
// mt19937_64 plus the mappings below give the same draw sequence everywhere.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives an independent stream seed from a base seed and a short tag.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a 64
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return splitmix64(seed ^ h);
}

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

/// Uniform double in [0, 1) with 53 random bits.
inline double next_double(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform index in [0, n). n must be >= 1.
inline std::size_t next_index(std::mt19937_64& rng, std::size_t n) {
    std::size_t i = static_cast<std::size_t>(next_double(rng) * static_cast<double>(n));
    return i < n ? i : n - 1;
}

/// Standard normal via Box-Muller. Draws two uniforms per call.
inline double next_normal(std::mt19937_64& rng) {
    double u1 = next_double(rng);
    double u2 = next_double(rng);
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

/// In-place Fisher-Yates shuffle driven by next_index.
template <typename T>
void shuffle_vec(std::vector<T>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = next_index(rng, i);
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace slidekit
