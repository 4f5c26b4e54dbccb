#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace deliberec {

/// std::uniform_int_distribution is implementation-defined; this rejection
/// sampler gives the same stream on every standard library.
inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

/// Uniform double in [0, 1) from the top 53 bits.
inline double unit(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <class T>
void portable_shuffle(std::span<T> items, std::mt19937_64& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(bounded(rng, i));
        std::swap(items[i - 1], items[j]);
    }
}

} // namespace deliberec
