#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace certilev {

// Deterministic PRNG with named sub-streams. Every random decision in the
// toolkit flows from a single user seed; independent components draw from
// streams keyed by name ("init", "shuffle", "synthetic", ...) so each can
// be reproduced in isolation. xoshiro-style splitmix core: identical output
// on every platform, unlike the distributions in <random>.
class Rng {
public:
    Rng() : state_(0x9e3779b97f4a7c15ull) {}
    explicit Rng(uint64_t seed) : state_(seed) {
        // avoid the all-zero fixed point of the raw stream
        next_u64();
    }
    Rng(uint64_t seed, std::string_view stream) : Rng(seed ^ fnv1a(stream)) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    // uniform integer in [0, n)
    uint64_t next_below(uint64_t n) {
        // rejection sampling keeps the distribution exact
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    int next_int(int lo, int hi_inclusive) {
        return lo + static_cast<int>(next_below(static_cast<uint64_t>(hi_inclusive - lo + 1)));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    static uint64_t fnv1a(std::string_view s) {
        uint64_t h = 0xcbf29ce484222325ull;
        for (char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ull;
        }
        return h;
    }

private:
    uint64_t state_;
};

} // namespace certilev
