#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "gcv/common.hpp"

namespace gcv {

// xoshiro256** seeded through splitmix64. Self-contained so streams are
// bit-reproducible across platforms (std distributions are not).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed) {
        std::uint64_t x = seed;
        for (auto& word : state_) {
            x += 0x9e3779b97f4a7c15ULL;
            std::uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            word = z ^ (z >> 31);
        }
    }

    std::uint64_t next_u64() {
        std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, one fresh pair per call (stateless between calls).
    double normal() {
        double u1 = uniform();
        if (u1 <= 0.0) {
            u1 = 0x1.0p-53;
        }
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Unbiased draw from [0, n).
    std::int64_t uniform_int(std::int64_t n) {
        auto bound = static_cast<std::uint64_t>(n);
        std::uint64_t threshold = (0 - bound) % bound;
        std::uint64_t x = next_u64();
        while (x < threshold) {
            x = next_u64();
        }
        return static_cast<std::int64_t>(x % bound);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Independent substream derived by hashing; does not advance this stream.
    Rng child(std::uint64_t tag) const { return Rng(hash_combine(seed_, tag)); }

    Rng child(std::uint64_t a, std::uint64_t b) const { return Rng(hash_combine(hash_combine(seed_, a), b)); }

    std::uint64_t seed() const { return seed_; }

    std::array<std::uint64_t, 5> serialize() const {
        return {seed_, state_[0], state_[1], state_[2], state_[3]};
    }

    static Rng deserialize(const std::array<std::uint64_t, 5>& words) {
        Rng r(words[0]);
        r.state_ = {words[1], words[2], words[3], words[4]};
        return r;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t seed_;
    std::array<std::uint64_t, 4> state_{};
};

}  // namespace gcv
