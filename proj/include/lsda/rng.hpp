#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace lsda {

using Rng = std::mt19937_64;

// Stream tags keep derived generators for different purposes independent.
enum class Stream : std::uint64_t {
    RealImage = 1,
    Forgery = 2,
    Perturb = 3,
    Batch = 4,
    Init = 5,
    Augment = 6,
    Split = 7,
    Pretrain = 8,
    Test = 9,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seed for the stream identified by (root, tag, path...). Depends only on the
// inputs, never on call order, so parallel workers reproduce serial output.
inline std::uint64_t derive_seed(std::uint64_t root, Stream tag,
                                 std::initializer_list<std::uint64_t> path = {}) {
    std::uint64_t h = splitmix64(root ^ splitmix64(static_cast<std::uint64_t>(tag)));
    for (std::uint64_t p : path) {
        h = splitmix64(h ^ splitmix64(p + 0x632be59bd9b4e019ULL));
    }
    return h;
}

inline Rng make_rng(std::uint64_t root, Stream tag, std::initializer_list<std::uint64_t> path = {}) {
    return Rng(derive_seed(root, tag, path));
}

inline double uniform(Rng& rng, double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double normal(Rng& rng, double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace lsda
