#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "carpas/errors.hpp"

namespace carpas {

// Deterministic RNG used everywhere seeds appear. We avoid
// std::uniform_int_distribution because its output is not pinned by the
// standard; the helpers below produce the same stream on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // Uniform integer in [0, bound), bound > 0. Rejection sampling, unbiased.
    std::uint64_t below(std::uint64_t bound) {
        if (bound == 0) throw ValidationError("Rng::below: bound must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % bound;
    }

    // Uniform integer in [lo, hi] inclusive.
    std::int64_t between(std::int64_t lo, std::int64_t hi) {
        if (hi < lo) throw ValidationError("Rng::between: empty range");
        return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo) + 1));
    }

    // Uniform double in [0, 1).
    double unit() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Uniform double in [-a, a].
    double symmetric(double a) { return (2.0 * unit() - 1.0) * a; }

    // Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

    // k distinct elements sampled uniformly without replacement, in draw order.
    template <typename T>
    std::vector<T> sample(const std::vector<T>& pool, std::size_t k) {
        if (k > pool.size())
            throw ValidationError("Rng::sample: k exceeds pool size");
        std::vector<T> work = pool;
        std::vector<T> out;
        out.reserve(k);
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t j = static_cast<std::size_t>(below(work.size()));
            out.push_back(work[j]);
            std::swap(work[j], work.back());
            work.pop_back();
        }
        return out;
    }

private:
    std::mt19937_64 engine_;
};

// FNV-1a 64-bit digest of arbitrary bytes; stable across platforms, used for
// cache keys, derived seeds, and config stamping.
inline std::uint64_t fnv1a64(const std::string& data) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string fnv1a64_hex(const std::string& data) {
    static const char* digits = "0123456789abcdef";
    std::uint64_t h = fnv1a64(data);
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

// Mixes a base seed with a context string so distinct contexts get
// independent, reproducible streams.
inline std::uint64_t derive_seed(std::uint64_t base, const std::string& context) {
    std::uint64_t h = fnv1a64(context);
    h ^= base + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return h;
}

} // namespace carpas
