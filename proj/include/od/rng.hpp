#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace od {

// 64-bit FNV-1a. Used for config hashes and for deriving per-stage seeds.
inline uint64_t fnv1a64(std::string_view bytes, uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t hash_combine(uint64_t seed, uint64_t v) {
    // splitmix64 finalizer over the pair; stable across platforms
    uint64_t x = seed + 0x9e3779b97f4a7c15ull + v;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t seed, std::string_view tag, uint64_t index = 0) {
    return hash_combine(hash_combine(seed, fnv1a64(tag)), index);
}

// Deterministic RNG wrapper. mt19937_64 output is pinned by the standard;
// the normal sampler is hand-rolled (Marsaglia polar) so the byte stream
// never depends on the standard library's distribution implementation.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // uniform in [0, 1)
    double uniform() {
        return double(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t uniform_index(uint64_t n) {
        // modulo bias is irrelevant at desk scale but cheap to avoid
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v;
        do {
            v = eng_();
        } while (v >= limit);
        return v % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        double mul = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * mul;
        has_spare_ = true;
        return u * mul;
    }

    // Fisher-Yates, identical order on every platform
    template <class V>
    void shuffle(V& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = size_t(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace od
