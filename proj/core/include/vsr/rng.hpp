#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

namespace vsr {

// Counter-based pseudo-random generation built on the splitmix64 finalizer.
// Every draw is a pure function of (seed, counter), so streams can be
// replayed, split by key, and evaluated out of order with identical results
// on any platform.

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Stateless hash of (seed, counter) into a well-mixed 64-bit word.
inline uint64_t hash_counter(uint64_t seed, uint64_t counter) {
    return splitmix64(splitmix64(seed) ^ splitmix64(counter * 0xd6e8feb86659fd93ULL + 1));
}

// Derive an independent stream seed from a parent seed and a stream key.
inline uint64_t derive_seed(uint64_t seed, uint64_t key) {
    return splitmix64(seed ^ (key * 0xa24baed4963ee407ULL + 0x9fb21c651e98df25ULL));
}

// Map a 64-bit word to [0,1) with 53 bits of precision.
inline double u01(uint64_t bits) {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Sequential generator over a counter stream.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed) {}

    uint64_t next_u64() { return hash_counter(seed_, counter_++); }

    double uniform() { return u01(next_u64()); }

    // Uniform over [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller. Draws two counters per pair; the spare
    // value is cached so consecutive calls stay cheap.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // Avoid log(0).
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
    uint64_t counter_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Indexed standard normal: value i of the stream, independent of call order.
inline double normal_at(uint64_t seed, uint64_t index) {
    double u1 = u01(hash_counter(seed, 2 * index));
    const double u2 = u01(hash_counter(seed, 2 * index + 1));
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(6.283185307179586476925286766559 * u2);
}

// FNV-1a 64-bit digest. Used for content digests of tensors, files, stats.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Digest of float data in its canonical little-endian byte order.
inline uint64_t digest_f32(const float* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    static_assert(sizeof(float) == 4);
    for (size_t i = 0; i < n; ++i) {
        uint32_t bits;
        std::memcpy(&bits, &data[i], 4);
        unsigned char b[4] = {static_cast<unsigned char>(bits & 0xff),
                              static_cast<unsigned char>((bits >> 8) & 0xff),
                              static_cast<unsigned char>((bits >> 16) & 0xff),
                              static_cast<unsigned char>((bits >> 24) & 0xff)};
        h = fnv1a64(b, 4, h);
    }
    return h;
}

}  // namespace vsr
