// Seeded random streams with a contractual, platform-independent output
// sequence.
//
// Layout of one stream:
//   engine   mt19937_64 seeded with splitmix64(seed ^ fnv1a64(stream_id)).
//            The C++ standard pins the mt19937_64 output sequence exactly,
//            so (seed, stream_id, draw index) -> value holds everywhere.
//   uniform  (next_u64() >> 11) * 2^-53, i.e. 53-bit doubles in [0, 1).
//   normal   Marsaglia polar method over uniform pairs, spare cached.
//            Chosen over std::normal_distribution, whose sequence is
//            implementation-defined.
//
// Streams are single-owner: advancing them is part of every caller's
// contract and they must not be shared across threads.
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "pipesentry/tensor.hpp"

namespace pipesentry {

namespace detail {

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

}  // namespace detail

class RandomStream {
public:
    RandomStream(uint64_t seed, std::string_view stream_id)
        : seed_(seed),
          stream_id_(stream_id),
          engine_(detail::splitmix64(seed ^ detail::fnv1a64(stream_id))) {}

    uint64_t seed() const { return seed_; }
    const std::string& stream_id() const { return stream_id_; }

    uint64_t next_u64() { return engine_(); }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Standard normal via the polar method. Two uniforms per accepted pair;
    // the second sample of a pair is cached and served on the next call.
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
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    // Uniform integer in [lo, hi], by modulo reduction. The bias at 64 bits
    // is immaterial for the span sizes used here.
    int uniform_int(int lo, int hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    // In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (size_t i = items.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(next_u64() % i);
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    uint64_t seed_;
    std::string stream_id_;
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// rows x cols of i.i.d. N(0,1) samples drawn row-major from the stream.
inline Tensor gaussian(RandomStream& stream, int rows, int cols) {
    Tensor out(rows, cols);
    for (double& v : out.data()) v = stream.normal();
    return out;
}

}  // namespace pipesentry
