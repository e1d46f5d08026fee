#pragma once

// Deterministic 64-bit RNG for all randomized planning and sampling.
// SplitMix64: identical streams on every platform, no std::random_device,
// no distribution-object variance across standard libraries.
// Per-document / per-node streams are derived as seed XOR fnv1a64(tag).

#include <cmath>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace textveil {

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t derive_stream(uint64_t seed, std::string_view tag) {
    return seed ^ fnv1a64(tag);
}

class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Unbiased integer in [0, n). Lemire's multiply-shift with rejection.
    uint64_t below(uint64_t n) {
        if (n == 0) return 0;
        unsigned __int128 m = (unsigned __int128)next() * n;
        uint64_t lo = (uint64_t)m;
        if (lo < n) {
            uint64_t threshold = (0 - n) % n;
            while (lo < threshold) {
                m = (unsigned __int128)next() * n;
                lo = (uint64_t)m;
            }
        }
        return (uint64_t)(m >> 64);
    }

    size_t index(size_t n) { return (size_t)below((uint64_t)n); }

    // Uniform double in [0, 1).
    double real() { return (next() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; two draws per call, no cached spare.
    double normal() {
        double u1 = 1.0 - real(); // (0, 1]
        double u2 = real();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct indices from [0, n), in draw order. Partial Fisher-Yates.
    std::vector<size_t> sample_without_replacement(size_t n, size_t k) {
        std::vector<size_t> idx(n);
        for (size_t i = 0; i < n; ++i) idx[i] = i;
        if (k > n) k = n;
        std::vector<size_t> out;
        out.reserve(k);
        for (size_t i = 0; i < k; ++i) {
            size_t j = i + index(n - i);
            std::swap(idx[i], idx[j]);
            out.push_back(idx[i]);
        }
        return out;
    }

private:
    uint64_t state_;
};

} // namespace textveil
