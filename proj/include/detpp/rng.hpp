#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace detpp {

// Deterministic RNG built on std::mt19937_64 (the engine is fully specified
// by the standard; the library distributions are not, so the transforms
// below are hand-rolled to keep results bit-stable across toolchains).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Uniform in (0, 1); safe as a log/Box-Muller argument.
    double uniform_open() {
        return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Exponential with the given rate.
    double exponential(double rate) { return -std::log(uniform_open()) / rate; }

    // Standard normal via Box-Muller (one draw per call; the pair's second
    // half is discarded so the stream stays position-independent).
    double normal() {
        const double u1 = uniform_open();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Multiply-shift rejection-free mapping; bias is < 2^-53 * n, which is
        // negligible for the desk-scale n used here.
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
    }

private:
    std::mt19937_64 engine_;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Hashes a tag path down to a 64-bit stream key.
inline std::uint64_t stream_key(std::initializer_list<std::uint64_t> path) {
    std::uint64_t h = 0x243f6a8885a308d3ULL;
    for (std::uint64_t v : path) {
        h = splitmix64(h ^ v);
    }
    return h;
}

// Derives an independent stream from a root seed and a tag path, e.g.
// rng_stream({seed, kStreamDataset, sequence_index}).
inline Rng rng_stream(std::initializer_list<std::uint64_t> path) {
    return Rng(stream_key(path));
}

// Stream tags, one per independent consumer of randomness.
inline constexpr std::uint64_t kStreamDataset = 0xda7a5e7ULL;
inline constexpr std::uint64_t kStreamSplit = 0x5917fULL;
inline constexpr std::uint64_t kStreamInit = 0x1417aaULL;
inline constexpr std::uint64_t kStreamShuffle = 0x712157ULL;
inline constexpr std::uint64_t kStreamCalib = 0xca11b7ULL;

} // namespace detpp
