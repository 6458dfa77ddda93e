#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string_view>
#include <vector>

namespace switchprompt {

/// SplitMix64 finalizer. Used both as a stateless hash and as the step
/// function of the generator below.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) noexcept {
    return mix64(a ^ (mix64(b) + 0x632be59bd9b4e019ULL + (a << 6) + (a >> 2)));
}

/// 64-bit FNV-1a over raw bytes.
constexpr std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Deterministic generator whose output is identical on every platform.
/// std:: distributions are implementation-defined, so sampling helpers are
/// implemented here directly.
class Rng {
   public:
    explicit Rng(std::uint64_t seed) : state_(mix64(seed)) {}
    Rng(std::uint64_t seed, std::uint64_t stream) : state_(hash_combine(seed, stream)) {}

    std::uint64_t next() noexcept { return mix64(state_++); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, bound). Rejection sampling, no modulo bias.
    std::size_t below(std::size_t bound) noexcept {
        if (bound <= 1) return 0;
        const std::uint64_t b = bound;
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % b);
        std::uint64_t r;
        do {
            r = next();
        } while (r >= limit);
        return static_cast<std::size_t>(r % b);
    }

    /// Standard normal via Box-Muller (cosine branch only).
    double normal() noexcept {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::span<T> items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[below(i)]);
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& items) noexcept {
        shuffle(std::span<T>(items));
    }

   private:
    std::uint64_t state_;
};

/// Counter-based uniform draw: a pure function of (key, counter).
inline double counter_uniform(std::uint64_t key, std::uint64_t counter) noexcept {
    return static_cast<double>(hash_combine(key, counter) >> 11) * 0x1.0p-53;
}

}  // namespace switchprompt
