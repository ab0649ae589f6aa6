#pragma once

#include <cstdint>
#include <string_view>

namespace sosuq {

// Counter-based pseudo-random generator built on the splitmix64 output
// function (Steele, Lea, Flood 2014): the state advances by the fixed
// increment 0x9e3779b97f4a7c15 and each output is an avalanching hash of
// the state. The full stream is therefore a pure function of the seed,
// which keeps every consumer of randomness in this project reproducible
// from a single integer.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
    std::uint64_t uniform_int(std::uint64_t n);

    bool bernoulli(double p_true) { return uniform() < p_true; }

    /// Standard normal via the Marsaglia polar method. The second value of
    /// each pair is cached, so draws come in a fixed per-seed order.
    double gaussian();

private:
    std::uint64_t state_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

/// Derives an independent child seed from (seed, stream label, index) by
/// hashing the label with FNV-1a and mixing everything through splitmix64
/// steps. Used to give each phantom, noise draw, dropout mask, etc. its own
/// documented stream.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0);

} // namespace sosuq
