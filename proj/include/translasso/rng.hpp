#pragma once

#include <cstdint>
#include <random>

namespace translasso {

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept
{
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Seed of stream (a, b) under root seed; distinct keys give unrelated streams.
constexpr std::uint64_t stream_seed(std::uint64_t root, std::uint64_t a, std::uint64_t b = 0) noexcept
{
    return mix64(mix64(mix64(root) ^ (a * 0xd1342543de82ef95ULL + 1)) ^ (b * 0x2545f4914f6cdd1dULL + 7));
}

/// Engine keyed by (root seed, stream ids). Reproducible regardless of scheduling.
inline std::mt19937_64 make_stream(std::uint64_t root, std::uint64_t a, std::uint64_t b = 0)
{
    return std::mt19937_64(stream_seed(root, a, b));
}

// Stream ids used across the project.
namespace streams {
inline constexpr std::uint64_t supports = 1;
inline constexpr std::uint64_t truth = 2;
inline constexpr std::uint64_t design = 3;
inline constexpr std::uint64_t noise = 4;
inline constexpr std::uint64_t test_sets = 5;
inline constexpr std::uint64_t realization = 6;
inline constexpr std::uint64_t monte_carlo = 7;
inline constexpr std::uint64_t folds = 8;
} // namespace streams

} // namespace translasso
