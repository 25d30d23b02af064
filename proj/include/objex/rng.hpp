#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace objex {

// Deterministic RNG. All conversions from raw engine output are done by hand
// so that a given seed produces the same stream on every platform; the
// distributions in <random> do not guarantee that.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    // Named substream: one global seed fans out to independent streams for
    // init, data order, per-sample chains, etc.
    Rng(uint64_t seed, std::string_view stream) : gen_(mix(seed ^ fnv1a(stream))) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). Multiply-shift; bias is O(n / 2^64).
    uint64_t uniform_int(uint64_t n) {
        return static_cast<uint64_t>((static_cast<__uint128_t>(gen_()) * n) >> 64);
    }

    // Standard normal via Box-Muller.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    static uint64_t fnv1a(std::string_view s) {
        uint64_t h = 1469598103934665603ull;
        for (char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ull;
        }
        return h;
    }

    // splitmix64 finalizer; decorrelates nearby seeds.
    static uint64_t mix(uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace objex
