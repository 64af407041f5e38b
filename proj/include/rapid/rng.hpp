#pragma once

#include <cstdint>

// Portable deterministic hashing and PRNG primitives. Every node must derive
// identical rings, observer ranks and loss streams from the same inputs, so
// the exact algorithms are fixed here and documented in docs/SCHEMA.md.
// Do not swap these for std:: facilities; libstdc++/libc++ differ.

namespace rapid {

// SplitMix64 finalizer (Steele, Lea, Flood 2014).
constexpr uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

constexpr uint64_t mix64(uint64_t a, uint64_t b) { return mix64(mix64(a) ^ b); }
constexpr uint64_t mix64(uint64_t a, uint64_t b, uint64_t c) {
    return mix64(mix64(a, b) ^ c);
}
constexpr uint64_t mix64(uint64_t a, uint64_t b, uint64_t c, uint64_t d) {
    return mix64(mix64(a, b, c) ^ d);
}

// FNV-1a over bytes, used for configuration ids and message digests.
constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr uint64_t kFnvPrime = 0x100000001b3ull;

constexpr uint64_t fnv1a64(const unsigned char* data, size_t len,
                           uint64_t h = kFnvOffset) {
    for (size_t i = 0; i < len; ++i) {
        h ^= data[i];
        h *= kFnvPrime;
    }
    return h;
}

constexpr uint64_t fnv1a64_u64(uint64_t v, uint64_t h) {
    // little-endian byte order, fixed regardless of host
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xff;
        h *= kFnvPrime;
    }
    return h;
}

inline uint64_t fnv1a64_str(const char* s, size_t len, uint64_t h = kFnvOffset) {
    return fnv1a64(reinterpret_cast<const unsigned char*>(s), len, h);
}

// SplitMix64 sequence generator. Cheap, stateless enough to fork substreams
// by seed mixing; statistically fine for loss sampling and shuffles.
class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, bound), bound > 0; rejection-free Lemire reduction
    // is avoided to keep the mapping trivially portable.
    uint64_t next_below(uint64_t bound) { return next() % bound; }

    // uniform double in [0, 1)
    double next_unit() { return (next() >> 11) * 0x1.0p-53; }

private:
    uint64_t state_;
};

}  // namespace rapid
